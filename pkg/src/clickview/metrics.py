"""Aggregate error metrics over per-instance geodesic errors (radians)."""

from __future__ import annotations

import numpy as np


def acc_at(errors, thresh: float) -> float:
    """Fraction of errors strictly below ``thresh`` (radians)."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("acc_at needs a non-empty error list")
    return float(np.count_nonzero(e < thresh) / e.size)


def med_err(errors) -> float:
    """Median error in degrees; even counts average the two central values."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("med_err needs a non-empty error list")
    return float(np.degrees(np.median(e)))


def acc_curve_nauc(errors, grid=None) -> tuple[np.ndarray, np.ndarray, float]:
    """Accuracy-vs-threshold curve on [0, pi/4] plus its normalized area.

    Returns (thresholds, accuracies, nauc) where nauc is the trapezoid
    area under the curve divided by pi/4.
    """
    if grid is None:
        grid = np.linspace(0.0, np.pi / 4, 64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("threshold grid must be strictly ascending")
    if grid[0] < 0 or grid[-1] > np.pi / 4 + 1e-12:
        raise ValueError("threshold grid must lie within [0, pi/4]")
    accs = np.array([acc_at(errors, t) for t in grid])
    nauc = float(np.trapezoid(accs, grid) / (np.pi / 4))
    return grid, accs, nauc
