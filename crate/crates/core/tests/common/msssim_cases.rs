//! Image pairs and MS-SSIM values from an independent implementation
//! (pytorch-msssim, float64); see `tests/oracles/ms_ssim_reference.py`.

use ndarray::Array3;

struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

// (height, width, channels, noise amplitude, reference MS-SSIM)
pub const CASES: [(usize, usize, usize, f64, f64); 20] = [
    (161, 161, 3, 0.02, 0.997595649443),
    (161, 161, 3, 0.3, 0.738915593165),
    (176, 200, 3, 0.05, 0.985531356222),
    (176, 200, 1, 0.1, 0.946757323498),
    (192, 256, 3, 0.01, 0.999406125106),
    (192, 256, 3, 0.5, 0.571955765042),
    (200, 177, 3, 0.08, 0.965042721971),
    (177, 200, 1, 0.2, 0.844019025367),
    (163, 171, 3, 0.03, 0.994721064900),
    (165, 190, 3, 0.15, 0.898156071343),
    (256, 192, 1, 0.04, 0.990641946141),
    (208, 208, 3, 0.25, 0.787736757943),
    (170, 170, 3, 0.12, 0.929145514179),
    (181, 223, 3, 0.06, 0.979111972821),
    (240, 161, 1, 0.35, 0.692946480452),
    (224, 224, 3, 0.02, 0.997621201932),
    (161, 300, 3, 0.09, 0.956900136610),
    (199, 201, 3, 0.18, 0.863944957374),
    (230, 170, 1, 0.07, 0.972567325924),
    (185, 185, 3, 0.4, 0.647544508802),
];

pub fn make_pair(index: usize, h: usize, w: usize, c: usize, amp: f64) -> (Array3<f64>, Array3<f64>) {
    let mut rng = SplitMix64(1000 + index as u64);
    let mut a = Array3::zeros((h, w, c));
    let mut b = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let base = 0.5 + 0.3 * (0.045 * x as f64 + 0.07 * y as f64 + 1.3 * k as f64 + 0.1 * index as f64).sin();
                let va = (base + 0.2 * (rng.uniform() - 0.5)).clamp(0.0, 1.0);
                let vb = (va + 2.0 * amp * (rng.uniform() - 0.5)).clamp(0.0, 1.0);
                a[[y, x, k]] = va;
                b[[y, x, k]] = vb;
            }
        }
    }
    (a, b)
}
