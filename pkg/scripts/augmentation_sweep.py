"""Sweep the channel-alignment augmentations over a parameter grid.

Writes one PNG per (strategy, parameter) cell so the operators can be
inspected visually, plus the base image for reference. Input is either a
PNG of your own or a synthetic identity template.

    python3 scripts/augmentation_sweep.py --out sweep/
    python3 scripts/augmentation_sweep.py --image photo.png --out sweep/ --steps 7
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from crossrank.fileio import load_image_rgb, save_image_rgb
from crossrank.imgproc import (
    CHANNEL_NAMES,
    Simplex3Weights,
    cross_channel_cutmix,
    patch_from_lambda,
    sample_simplex3,
    spectrum_jitter,
    weighted_grayscale,
)
from crossrank.toytrain import SyntheticSpec, generate_synthetic_images


def base_image(args) -> np.ndarray:
    if args.image:
        return load_image_rgb(args.image)
    spec = SyntheticSpec(n_identities=1, samples_per_identity_per_modality=1,
                         input_dim=4, seed=args.seed)
    ds = generate_synthetic_images(spec, side=args.side)
    return ds.images[0]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--image", help="input PNG; omitted = synthetic template")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--steps", type=int, default=5, help="grid points per parameter")
    ap.add_argument("--side", type=int, default=48, help="synthetic template size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if args.steps < 2:
        ap.error("--steps must be >= 2")

    img = base_image(args)
    h, w = img.shape[1], img.shape[2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    save_image_rgb(out / "base.png", img)
    count = 1

    # random grayscale weights, plus the standard luminance point
    draws = [sample_simplex3(rng) for _ in range(args.steps - 1)]
    draws.append(Simplex3Weights(0.299, 0.587, 0.114))
    for i, wts in enumerate(draws):
        name = f"wg_{i}_a{wts.a1:.3f}_{wts.a2:.3f}_{wts.a3:.3f}.png"
        save_image_rgb(out / name, weighted_grayscale(img, wts))
        count += 1

    # cutmix area sweep via the patch-size law, centered patches
    for lam in np.linspace(0.0, 1.0, args.steps):
        rect = patch_from_lambda(float(lam), h // 2, w // 2, h, w)
        for bg, fg in ((0, 1), (1, 2)):
            name = (f"cc_{CHANNEL_NAMES[bg]}{CHANNEL_NAMES[fg]}_lam{lam:.2f}.png")
            save_image_rgb(out / name, cross_channel_cutmix(img, bg, fg, rect))
            count += 1

    # jitter blend sweep per channel
    for beta1 in np.linspace(0.0, 1.0, args.steps):
        for ch, ch_name in enumerate(CHANNEL_NAMES):
            name = f"sj_{ch_name}_b{beta1:.2f}.png"
            save_image_rgb(out / name, spectrum_jitter(img, ch, float(beta1)))
            count += 1

    print(f"wrote {count} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
