"""Writes a small synthetic stained-tissue corpus: one image per patient,
named <patientid>_<index>.{png,pgm}, tiled into 28x28 patches by the loader."""

import argparse
import pathlib

import numpy as np
from PIL import Image


def tissue(rng, height, width):
    """Pink background with dark purple blobs."""
    img = np.empty((height, width, 3))
    img[:] = (0.93, 0.75, 0.82)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(8, 16)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(2.5, 6.0)
        mask = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))[..., None]
        img = img * (1 - mask) + np.array((0.35, 0.2, 0.5)) * mask
    img += rng.normal(0, 0.03, img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/patches-fixture")
    ap.add_argument("--patients", type=int, default=16)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for p in range(args.patients):
        rgb = tissue(rng, 56, 84)
        if p % 2 == 0:
            Image.fromarray(rgb, "RGB").save(out / f"patient{p:02d}_0.png")
        else:
            gray = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]).round().astype(np.uint8)
            Image.fromarray(gray, "L").save(out / f"patient{p:02d}_0.pgm")


if __name__ == "__main__":
    main()
