"""Replay-time augmentation on reconstructed feature tensors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("mixup alpha must be positive")


@dataclass(frozen=True)
class CropConfig:
    # mild defaults: image-space ranges like (0.08, 1) wreck 4x4..8x8 grids
    scale_min: float = 0.6
    scale_max: float = 1.0
    aspect_min: float = 3 / 4
    aspect_max: float = 4 / 3
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.scale_min <= self.scale_max <= 1:
            raise ValueError("crop scale range must satisfy 0 < min <= max <= 1")
        if not 0 < self.aspect_min <= self.aspect_max:
            raise ValueError("crop aspect range must satisfy 0 < min <= max")


# ---------------------------------------------------------------- mixup

def _log_gamma_variate(shape: float, rng, size):
    # Gamma(a) = Gamma(a + 1) * U**(1/a) for a < 1; kept in log space so
    # tiny shapes never underflow to 0/0
    if shape < 1:
        return np.log(rng.standard_gamma(shape + 1, size)) + np.log(rng.random(size)) / shape
    return np.log(rng.standard_gamma(shape, size))


def sample_beta(alpha: float, rng: np.random.Generator, size=None):
    """Draw from Beta(alpha, alpha) as X / (X + Y) with X, Y ~ Gamma(alpha)."""
    lx = _log_gamma_variate(alpha, rng, size)
    ly = _log_gamma_variate(alpha, rng, size)
    # X / (X + Y) == 1 / (1 + exp(ly - lx))
    lam = 1.0 / (1.0 + np.exp(np.clip(ly - lx, -745.0, 709.0)))
    return float(lam) if size is None else lam


def mixup_pair(za, ya, zb, yb, lam: float):
    """Convex combination ``lam * (za, ya) + (1 - lam) * (zb, yb)``."""
    za = np.asarray(za)
    zb = np.asarray(zb)
    ya = np.asarray(ya, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    if za.shape != zb.shape:
        raise ValueError(f"tensor shapes differ: {za.shape} vs {zb.shape}")
    if ya.shape != yb.shape:
        raise ValueError(f"label shapes differ: {ya.shape} vs {yb.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    z = lam * za.astype(np.float64) + (1.0 - lam) * zb.astype(np.float64)
    y = lam * ya + (1.0 - lam) * yb
    return z.astype(za.dtype if za.dtype.kind == "f" else np.float32), y


def mixup_sets(za, ya, zb, yb, cfg: MixupConfig, rng: np.random.Generator):
    """Mix two equally sized replay sets element by element.

    ``za``/``zb`` have shape (r, m, m, d) and ``ya``/``yb`` shape (r, K).
    Returns ``(z_mix, y_mix, lambdas)`` with one Beta(alpha, alpha) draw per
    element.
    """
    za, zb = np.asarray(za), np.asarray(zb)
    ya, yb = np.asarray(ya, dtype=np.float64), np.asarray(yb, dtype=np.float64)
    if za.shape[0] != zb.shape[0] or ya.shape[0] != za.shape[0] or yb.shape[0] != zb.shape[0]:
        raise ValueError("mixup sets must have the same size")
    lam = sample_beta(cfg.alpha, rng, za.shape[0])
    lz = lam.reshape((-1,) + (1,) * (za.ndim - 1))
    z = lz * za.astype(np.float64) + (1.0 - lz) * zb.astype(np.float64)
    y = lam[:, None] * ya + (1.0 - lam[:, None]) * yb
    return z.astype(np.float32), y, lam


# ---------------------------------------------------------------- crops

def sample_crop_window(m: int, cfg: CropConfig, rng: np.random.Generator,
                       attempts: int = 10) -> tuple[int, int, int, int]:
    """Pick ``(top, left, height, width)`` of a crop on an m x m grid.

    Falls back to the full grid when ``attempts`` draws all give a window
    outside [1, m] on either side.
    """
    lo, hi = math.log(cfg.aspect_min), math.log(cfg.aspect_max)
    for _ in range(attempts):
        area = m * m * rng.uniform(cfg.scale_min, cfg.scale_max)
        ratio = math.exp(rng.uniform(lo, hi))
        w = int(round(math.sqrt(area * ratio)))
        h = int(round(math.sqrt(area / ratio)))
        if 1 <= w <= m and 1 <= h <= m:
            top = int(rng.integers(0, m - h + 1))
            left = int(rng.integers(0, m - w + 1))
            return top, left, h, w
    return 0, 0, m, m


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edges clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample an (h, w, d) array to (out_h, out_w, d)."""
    x = np.asarray(x, dtype=np.float64)
    r0, r1, fr = _axis_weights(x.shape[0], out_h)
    c0, c1, fc = _axis_weights(x.shape[1], out_w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = x[r0][:, c0] * (1 - fc) + x[r0][:, c1] * fc
    bot = x[r1][:, c0] * (1 - fc) + x[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def random_resized_crop(t, cfg: CropConfig, rng: np.random.Generator) -> np.ndarray:
    """Crop a random window and resample it back to the input's m x m size."""
    t = np.asarray(t)
    m = t.shape[0]
    if not cfg.enabled or m < 2:
        return t.copy()
    top, left, h, w = sample_crop_window(m, cfg, rng)
    if (h, w) == (m, m):
        return t.copy()
    out = resize_bilinear(t[top:top + h, left:left + w], m, m)
    return out.astype(t.dtype if t.dtype.kind == "f" else np.float32)


def crop_batch(X, cfg: CropConfig, rng: np.random.Generator) -> np.ndarray:
    """Independent random resized crop of every tensor in an (n, m, m, d) batch."""
    X = np.asarray(X)
    if not cfg.enabled:
        return X
    return np.stack([random_resized_crop(x, cfg, rng) for x in X]) if len(X) else X
