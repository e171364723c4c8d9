"""Keypoint encodings: distance-transform / Gaussian maps and class one-hots.

Pixel convention used across the project: integer pixels, origin at the
top-left, x is the column and y is the row. Maps are s-by-s grids stored
[row, col] with all values in [0, 1]; distance kinds are 0 exactly at the
keypoint, the Gaussian kind is 1 there. Normalizers are the largest value
any keypoint position could produce on the grid, not the max of the
particular map, so maps for different keypoints stay mutually comparable.
"""

from __future__ import annotations

import numpy as np

MAP_KINDS = ("chebyshev", "euclidean", "manhattan", "gaussian")


def _check_inside(x: int, y: int, s: int) -> None:
    if not (0 <= x < s and 0 <= y < s):
        raise ValueError(f"keypoint ({x}, {y}) outside {s}x{s} image")


def _offsets(x: int, y: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    cols = np.arange(s, dtype=np.float64)
    rows = np.arange(s, dtype=np.float64)
    dx = np.abs(cols[None, :] - x)
    dy = np.abs(rows[:, None] - y)
    return dx, dy


def chebyshev_map(x: int, y: int, s: int) -> np.ndarray:
    _check_inside(x, y, s)
    dx, dy = _offsets(x, y, s)
    return np.maximum(dx, dy) / (s - 1)


def euclidean_map(x: int, y: int, s: int) -> np.ndarray:
    _check_inside(x, y, s)
    dx, dy = _offsets(x, y, s)
    return np.sqrt(dx * dx + dy * dy) / (np.sqrt(2.0) * (s - 1))


def manhattan_map(x: int, y: int, s: int) -> np.ndarray:
    _check_inside(x, y, s)
    dx, dy = _offsets(x, y, s)
    return (dx + dy) / (2.0 * (s - 1))


def gaussian_map(x: int, y: int, s: int) -> np.ndarray:
    """Peak-normalized Gaussian bump; sigma is 10% of the image size."""
    _check_inside(x, y, s)
    sigma = float(round(0.10 * s))
    dx, dy = _offsets(x, y, s)
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def keypoint_map(kind: str, x: int, y: int, s: int) -> np.ndarray:
    if kind not in MAP_KINDS:
        raise ValueError(f"unknown map kind {kind!r}; expected one of {MAP_KINDS}")
    return {
        "chebyshev": chebyshev_map,
        "euclidean": euclidean_map,
        "manhattan": manhattan_map,
        "gaussian": gaussian_map,
    }[kind](x, y, s)


def one_hot_class(c: int, total: int) -> np.ndarray:
    if not 0 <= c < total:
        raise ValueError(f"class index {c} out of range [0, {total})")
    v = np.zeros(total, dtype=np.float64)
    v[c] = 1.0
    return v


def blank_class(total: int) -> np.ndarray:
    """All-zero class vector; only meaningful for the blank-input ablation."""
    return np.zeros(total, dtype=np.float64)


def perturb_keypoint(x: int, y: int, sigma_px: float, rng: np.random.Generator, s: int) -> tuple[int, int]:
    """Sample an isotropic Gaussian around (x, y), round, clamp into the image."""
    if sigma_px < 0:
        raise ValueError("sigma_px must be >= 0")
    if sigma_px == 0:
        return x, y
    nx, ny = rng.normal((x, y), sigma_px)
    nx = int(np.clip(round(nx), 0, s - 1))
    ny = int(np.clip(round(ny), 0, s - 1))
    return nx, ny
