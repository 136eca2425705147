"""Builds the stand-in evaluation and training corpora from photos shipped
with scikit-image and scikit-learn.

Evaluation images are center-cropped to 3:2 and resized to 384x256 (Kodak's
aspect at half resolution). Training images are disjoint from them.

    python3 data/prepare_corpus.py
"""

import os
from pathlib import Path

import skimage
import sklearn
from PIL import Image

SK = Path(skimage.__file__).parent / "data"
SL = Path(sklearn.__file__).parent / "datasets" / "images"
OUT = Path(__file__).resolve().parent

EVAL = [
    SK / "astronaut.png",
    SK / "chelsea.png",
    SK / "coffee.png",
    SL / "china.jpg",
    SL / "flower.jpg",
    SK / "rocket.jpg",
    SK / "motorcycle_left.png",
    SK / "ihc.png",
]
TRAIN = [
    SK / "hubble_deep_field.jpg",
    SK / "retina.jpg",
    SK / "color.png",
    SK / "camera.png",
    SK / "brick.png",
    SK / "grass.png",
    SK / "gravel.png",
    SK / "moon.png",
    SK / "coins.png",
    SK / "cell.png",
    SK / "clock_motion.png",
]


def crop_to_aspect(im, aspect):
    w, h = im.size
    if w / h > aspect:
        nw = round(h * aspect)
        left = (w - nw) // 2
        return im.crop((left, 0, left + nw, h))
    nh = round(w / aspect)
    top = (h - nh) // 2
    return im.crop((0, top, w, top + nh))


def main():
    for sub in ("eval", "train"):
        (OUT / sub).mkdir(exist_ok=True)
    for i, src in enumerate(EVAL, 1):
        im = crop_to_aspect(Image.open(src).convert("RGB"), 1.5)
        im = im.resize((384, 256), Image.LANCZOS)
        im.save(OUT / "eval" / f"img{i:02d}_{src.stem}.png", optimize=True)
    for i, src in enumerate(TRAIN, 1):
        im = Image.open(src).convert("RGB")
        w, h = im.size
        side = min(w, h)
        im = crop_to_aspect(im, 1.0)
        if side > 512:
            im = im.resize((512, 512), Image.LANCZOS)
        im.save(OUT / "train" / f"train{i:02d}_{src.stem}.png", optimize=True)


if __name__ == "__main__":
    main()
