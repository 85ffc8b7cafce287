"""Classic 2-D gradient (Perlin) noise, vectorized over pixel grids."""
from __future__ import annotations

import numpy as np

# Unit-ish gradient set; hash picks one per lattice corner.
_GRADS = np.array(
    [(1, 1), (-1, 1), (1, -1), (-1, -1), (1, 0), (-1, 0), (0, 1), (0, -1)],
    dtype=np.float64,
)


def _fade(t: np.ndarray) -> np.ndarray:
    # Ken Perlin's quintic: 6t^5 - 15t^4 + 10t^3
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _permutation(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    return np.concatenate([perm, perm]).astype(np.int64)


def _corner_dot(perm: np.ndarray, xi: np.ndarray, yi: np.ndarray,
                xf: np.ndarray, yf: np.ndarray) -> np.ndarray:
    h = perm[perm[xi & 255] + (yi & 255)] & 7
    g = _GRADS[h]
    return g[..., 0] * xf + g[..., 1] * yf


def perlin_grid(width: int, height: int, seed: int, cell: float = 16.0) -> np.ndarray:
    """Single-octave noise sampled at pixel centers; lattice spacing ``cell``."""
    xs = np.arange(width, dtype=np.float64) / cell
    ys = np.arange(height, dtype=np.float64) / cell
    x, y = np.meshgrid(xs, ys)
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf = x - xi
    yf = y - yi

    perm = _permutation(seed)
    n00 = _corner_dot(perm, xi, yi, xf, yf)
    n10 = _corner_dot(perm, xi + 1, yi, xf - 1.0, yf)
    n01 = _corner_dot(perm, xi, yi + 1, xf, yf - 1.0)
    n11 = _corner_dot(perm, xi + 1, yi + 1, xf - 1.0, yf - 1.0)

    u = _fade(xf)
    v = _fade(yf)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def fractal_noise(width: int, height: int, seed: int, cell: float = 16.0,
                  octaves: int = 4, persistence: float = 0.5) -> np.ndarray:
    """Octave-summed noise affinely mapped to [0, 1] per field."""
    total = np.zeros((height, width), dtype=np.float64)
    amplitude = 1.0
    frequency = 1.0
    for octave in range(octaves):
        total += amplitude * perlin_grid(width, height, seed + octave, cell / frequency)
        amplitude *= persistence
        frequency *= 2.0
    lo, hi = float(total.min()), float(total.max())
    if hi - lo < 1e-12:
        return np.full_like(total, 0.5)
    return (total - lo) / (hi - lo)
