"""Reference MS-SSIM values for the cross-implementation test.

Regenerates the table frozen in tests/metrics_oracle.rs using the
pytorch-msssim package (the implementation CompressAI evaluates with),
computed in float64. Image pairs come from the same splitmix64 stream the
Rust test uses, so no fixture files are needed.

    pip install torch pytorch-msssim
    python3 tests/oracles/ms_ssim_reference.py
"""

import math

import torch
from pytorch_msssim import ms_ssim

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next_u64() >> 11) / float(1 << 53)


# (height, width, channels, noise amplitude)
CASES = [
    (161, 161, 3, 0.02), (161, 161, 3, 0.30), (176, 200, 3, 0.05), (176, 200, 1, 0.10),
    (192, 256, 3, 0.01), (192, 256, 3, 0.50), (200, 177, 3, 0.08), (177, 200, 1, 0.20),
    (163, 171, 3, 0.03), (165, 190, 3, 0.15), (256, 192, 1, 0.04), (208, 208, 3, 0.25),
    (170, 170, 3, 0.12), (181, 223, 3, 0.06), (240, 161, 1, 0.35), (224, 224, 3, 0.02),
    (161, 300, 3, 0.09), (199, 201, 3, 0.18), (230, 170, 1, 0.07), (185, 185, 3, 0.40),
]


def make_pair(index, h, w, c, amp):
    rng = SplitMix64(1000 + index)
    a = torch.empty(h, w, c, dtype=torch.float64)
    b = torch.empty(h, w, c, dtype=torch.float64)
    for y in range(h):
        for x in range(w):
            for k in range(c):
                base = 0.5 + 0.3 * math.sin(0.045 * x + 0.07 * y + 1.3 * k + 0.1 * index)
                va = min(max(base + 0.2 * (rng.uniform() - 0.5), 0.0), 1.0)
                vb = min(max(va + 2.0 * amp * (rng.uniform() - 0.5), 0.0), 1.0)
                a[y, x, k] = va
                b[y, x, k] = vb
    return a, b


def main():
    for i, (h, w, c, amp) in enumerate(CASES):
        a, b = make_pair(i, h, w, c, amp)
        ta = a.permute(2, 0, 1).unsqueeze(0)
        tb = b.permute(2, 0, 1).unsqueeze(0)
        v = ms_ssim(ta, tb, data_range=1.0).item()
        print(f"    ({h}, {w}, {c}, {amp}, {v:.12f}),")


if __name__ == "__main__":
    main()
