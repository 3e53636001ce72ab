"""Channel-alignment augmentations for visible/infrared image pairs.

Images are channel-first float arrays of shape (3, H, W) with intensities in
[0, 1]. All operators are pure given an explicit numpy Generator, so batch
augmentation can fan out per-image with independent seeded streams.

The three strategies share one goal: make a 3-channel color image look more
like a channel-replicated single-band image while keeping its color
information in play.

- weighted grayscale (wg): convex random fusion of the R/G/B planes,
  replicated to three identical planes.
- cross-channel cutmix (cc): one channel pasted as a rectangular patch onto
  another channel of the same image, replicated to three planes.
- spectrum jitter (sj): convex blend of the image with one of its own
  channels repeated three times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_NAMES = ("r", "g", "b")


@dataclass(frozen=True)
class Simplex3Weights:
    """Three nonnegative fusion weights summing to one."""

    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        w = (self.a1, self.a2, self.a3)
        if any(not np.isfinite(v) or v < 0.0 or v > 1.0 for v in w):
            raise ValueError(f"simplex weights must lie in [0, 1], got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"simplex weights must sum to 1, got sum={sum(w)!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3], dtype=np.float64)


@dataclass(frozen=True)
class PatchRect:
    """Axis-aligned patch; zero-area rects (patch_h or patch_w == 0) are legal."""

    top: int
    left: int
    patch_h: int
    patch_w: int


@dataclass(frozen=True)
class MaaConfig:
    """Per-image augmentation gate and strategy mix.

    apply_probability is the chance the augmentation fires at all; when it
    does, one of (wg, cc, sj) is drawn according to strategy_weights.
    """

    apply_probability: float = 1.0
    strategy_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError(
                f"apply_probability must be in [0, 1], got {self.apply_probability}"
            )
        w = self.strategy_weights
        if len(w) != 3 or any(v < 0.0 for v in w) or sum(w) <= 0.0:
            raise ValueError(f"strategy_weights must be 3 nonnegative values with positive sum, got {w}")


@dataclass(frozen=True)
class MaaSample:
    """One drawn augmentation decision; enough to replay it exactly."""

    strategy: str  # "identity", "wg", "cc" or "sj"
    weights: Simplex3Weights | None = None
    bg: int | None = None
    fg: int | None = None
    rect: PatchRect | None = None
    channel: int | None = None
    beta1: float | None = None

    def describe(self) -> str:
        if self.strategy == "wg":
            w = self.weights
            return f"strategy=wg weights={w.a1:.6f},{w.a2:.6f},{w.a3:.6f}"
        if self.strategy == "cc":
            r = self.rect
            return (
                f"strategy=cc bg={CHANNEL_NAMES[self.bg]} fg={CHANNEL_NAMES[self.fg]} "
                f"rect={r.top},{r.left},{r.patch_h},{r.patch_w}"
            )
        if self.strategy == "sj":
            return f"strategy=sj channel={CHANNEL_NAMES[self.channel]} beta1={self.beta1:.6f}"
        return "strategy=identity"


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (3, H, W), finite, [0, 1] contract; returns a float64 view/copy."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"image must be at least 1x1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def weighted_grayscale(img: np.ndarray, w: Simplex3Weights) -> np.ndarray:
    """Fuse R/G/B with convex weights; result replicated to 3 identical planes.

    With weights (0.299, 0.587, 0.114) this reproduces the standard luma
    grayscale conversion; one-hot weights reduce to picking a single channel.
    """
    arr = validate_image(img)
    plane = w.a1 * arr[0] + w.a2 * arr[1] + w.a3 * arr[2]
    # convex combination stays in [0, 1]; clip only guards float roundoff
    np.clip(plane, 0.0, 1.0, out=plane)
    return np.broadcast_to(plane, arr.shape).copy()


def sample_simplex3(rng: np.random.Generator) -> Simplex3Weights:
    """Uniform sample on the 2-simplex via sorted uniform spacings."""
    u = np.sort(rng.random(2))
    return Simplex3Weights(float(u[0]), float(u[1] - u[0]), float(1.0 - u[1]))


def cross_channel_cutmix(img: np.ndarray, bg: int, fg: int, rect: PatchRect) -> np.ndarray:
    """Paste a rectangle of channel `fg` onto channel `bg`; replicate to 3 planes."""
    arr = validate_image(img)
    if bg == fg:
        raise ValueError("background and foreground channels must differ")
    if bg not in (0, 1, 2) or fg not in (0, 1, 2):
        raise ValueError(f"channel indices must be 0, 1 or 2, got bg={bg} fg={fg}")
    h, w = arr.shape[1], arr.shape[2]
    if rect.patch_h < 0 or rect.patch_w < 0:
        raise ValueError(f"patch extents must be nonnegative, got {rect}")
    if not (0 <= rect.top and rect.top + rect.patch_h <= h):
        raise ValueError(f"patch rows [{rect.top}, {rect.top + rect.patch_h}) exceed image height {h}")
    if not (0 <= rect.left and rect.left + rect.patch_w <= w):
        raise ValueError(f"patch cols [{rect.left}, {rect.left + rect.patch_w}) exceed image width {w}")
    plane = arr[bg].copy()
    plane[rect.top : rect.top + rect.patch_h, rect.left : rect.left + rect.patch_w] = arr[
        fg, rect.top : rect.top + rect.patch_h, rect.left : rect.left + rect.patch_w
    ]
    return np.broadcast_to(plane, arr.shape).copy()


def patch_from_lambda(lam: float, center_top: int, center_left: int, h: int, w: int) -> PatchRect:
    """Build the clipped rect for mix fraction lam centered at the given pixel.

    Side lengths scale with sqrt(1 - lam) (round half up), so the unclipped
    patch covers roughly a (1 - lam) fraction of the image area.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    side = np.sqrt(1.0 - lam)
    patch_h = int(np.floor(h * side + 0.5))
    patch_w = int(np.floor(w * side + 0.5))
    top = center_top - patch_h // 2
    left = center_left - patch_w // 2
    top_c = max(top, 0)
    left_c = max(left, 0)
    bottom_c = min(top + patch_h, h)
    right_c = min(left + patch_w, w)
    return PatchRect(top_c, left_c, max(bottom_c - top_c, 0), max(right_c - left_c, 0))


def sample_cutmix_patch(rng: np.random.Generator, h: int, w: int) -> PatchRect:
    """Draw lam ~ U(0,1) and a uniform center, then clip the rect to bounds."""
    if h < 1 or w < 1:
        raise ValueError(f"image extent must be positive, got h={h} w={w}")
    lam = float(rng.random())
    center_top = int(rng.integers(0, h))
    center_left = int(rng.integers(0, w))
    return patch_from_lambda(lam, center_top, center_left, h, w)


def spectrum_jitter(img: np.ndarray, ch: int, beta1: float) -> np.ndarray:
    """Blend the image with one of its channels repeated three times.

    beta1=1 returns the original image, beta1=0 the fully degenerate
    (channel-replicated) image; intermediate values interpolate.
    """
    arr = validate_image(img)
    if ch not in (0, 1, 2):
        raise ValueError(f"channel index must be 0, 1 or 2, got {ch}")
    if not (np.isfinite(beta1) and 0.0 <= beta1 <= 1.0):
        raise ValueError(f"beta1 must be in [0, 1], got {beta1}")
    degenerate = np.broadcast_to(arr[ch], arr.shape)
    out = beta1 * arr + (1.0 - beta1) * degenerate
    np.clip(out, 0.0, 1.0, out=out)
    return out


def expand_infrared(plane: np.ndarray) -> np.ndarray:
    """Repeat a single H x W intensity plane into three identical planes."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"plane must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("plane intensities must be finite and in [0, 1]")
    return np.broadcast_to(arr, (3,) + arr.shape).copy()


def sample_maa_params(rng: np.random.Generator, cfg: MaaConfig, h: int, w: int) -> MaaSample:
    """Draw one augmentation decision.

    Draw order is part of the determinism contract: gate uniform, strategy
    choice, then the chosen strategy's parameters (wg: two uniforms; cc: two
    distinct channels, lam, center row, center col; sj: channel, beta1).
    """
    if rng.random() >= cfg.apply_probability:
        return MaaSample(strategy="identity")
    weights = np.asarray(cfg.strategy_weights, dtype=np.float64)
    strategy = ("wg", "cc", "sj")[int(rng.choice(3, p=weights / weights.sum()))]
    if strategy == "wg":
        return MaaSample(strategy="wg", weights=sample_simplex3(rng))
    if strategy == "cc":
        bg, fg = (int(c) for c in rng.choice(3, size=2, replace=False))
        return MaaSample(strategy="cc", bg=bg, fg=fg, rect=sample_cutmix_patch(rng, h, w))
    return MaaSample(strategy="sj", channel=int(rng.integers(3)), beta1=float(rng.random()))


def apply_maa_sample(img: np.ndarray, sample: MaaSample) -> np.ndarray:
    """Apply a previously drawn augmentation decision."""
    if sample.strategy == "identity":
        return validate_image(img).copy()
    if sample.strategy == "wg":
        return weighted_grayscale(img, sample.weights)
    if sample.strategy == "cc":
        return cross_channel_cutmix(img, sample.bg, sample.fg, sample.rect)
    if sample.strategy == "sj":
        return spectrum_jitter(img, sample.channel, sample.beta1)
    raise ValueError(f"unknown strategy {sample.strategy!r}")


def apply_maa(img: np.ndarray, rng: np.random.Generator, cfg: MaaConfig = MaaConfig()) -> np.ndarray:
    """Gate, pick a strategy, sample its parameters, and apply it."""
    arr = validate_image(img)
    sample = sample_maa_params(rng, cfg, arr.shape[1], arr.shape[2])
    return apply_maa_sample(arr, sample)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Unit-interval floats to 8-bit, round half up; used only at I/O boundaries."""
    arr = validate_image(img)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """8-bit intensities to unit-interval float64."""
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise ValueError(f"expected uint8 input, got {a.dtype}")
    return a.astype(np.float64) / 255.0
