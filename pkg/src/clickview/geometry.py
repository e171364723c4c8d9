"""Angle discretization, rotation matrices, geodesic metric, training loss.

A viewpoint is three circular angles (azimuth, elevation, in-plane tilt),
each discretized into N equal bins. One Euler composition,
``R_z(tilt) @ R_x(elevation) @ R_z(-azimuth)``, is used everywhere a
rotation matrix is needed (labels, metric, renderer), so the convention
itself cancels out of every comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class ViewpointLabel:
    """Camera orientation as degrees in [0, 360) plus bin indices."""

    azimuth_deg: float
    elevation_deg: float
    tilt_deg: float
    n_bins: int = 24

    def __post_init__(self):
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)
        object.__setattr__(self, "elevation_deg", float(self.elevation_deg) % 360.0)
        object.__setattr__(self, "tilt_deg", float(self.tilt_deg) % 360.0)
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")

    @property
    def bins(self) -> tuple[int, int, int]:
        return (
            angle_to_bin(self.azimuth_deg, self.n_bins),
            angle_to_bin(self.elevation_deg, self.n_bins),
            angle_to_bin(self.tilt_deg, self.n_bins),
        )

    @classmethod
    def from_bins(cls, b_az: int, b_el: int, b_ti: int, n_bins: int) -> "ViewpointLabel":
        return cls(
            bin_to_angle(b_az, n_bins),
            bin_to_angle(b_el, n_bins),
            bin_to_angle(b_ti, n_bins),
            n_bins,
        )


def angle_to_bin(angle_deg: float, n_bins: int) -> int:
    b = int((angle_deg % 360.0) // (360.0 / n_bins))
    return min(b, n_bins - 1)  # guard the 360-epsilon edge


def bin_to_angle(b: int, n_bins: int) -> float:
    """Center angle of bin ``b`` in degrees."""
    if not 0 <= b < n_bins:
        raise ValueError(f"bin {b} out of range [0, {n_bins})")
    return (b + 0.5) * (360.0 / n_bins)


def rot_z(rad: float) -> np.ndarray:
    c, s = np.cos(rad), np.sin(rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(rad: float) -> np.ndarray:
    c, s = np.cos(rad), np.sin(rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_from_viewpoint(v: ViewpointLabel) -> np.ndarray:
    """3x3 rotation realizing a viewpoint label.

    Composition is ``R_z(tilt) @ R_x(elevation) @ R_z(-azimuth)``; angles
    are taken mod 360.
    """
    az = np.deg2rad(v.azimuth_deg)
    el = np.deg2rad(v.elevation_deg)
    ti = np.deg2rad(v.tilt_deg)
    return rot_z(ti) @ rot_x(el) @ rot_z(-az)


def _check_rotation(r: np.ndarray, tol: float = 1e-6) -> None:
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol) or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("input is not a rotation matrix")


def geodesic_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle in radians of the relative rotation between two rotations.

    Equals ||log(R1^T R2)||_F / sqrt(2); computed in closed form from the
    trace, with the arccos argument clamped against round-off.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    _check_rotation(r1)
    _check_rotation(r2)
    tr = np.trace(r1.T @ r2)
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


def circular_bin_distance(b1: int, b2: int, n_bins: int) -> float:
    """Shortest wrap-around distance between two bins, in radians."""
    if not (0 <= b1 < n_bins and 0 <= b2 < n_bins):
        raise ValueError(f"bins ({b1}, {b2}) out of range [0, {n_bins})")
    d = abs(b1 - b2)
    return (2.0 * np.pi / n_bins) * min(d, n_bins - d)


def default_loss_temperature(n_bins: int) -> float:
    """Temperature putting weight e^-1 on the bins adjacent to the target."""
    return 2.0 * np.pi / n_bins


def bin_weight_row(gt_bin: int, n_bins: int, t: float) -> np.ndarray:
    """exp(-d(b, gt)/t) over all bins b; the loss weighting row."""
    if t <= 0:
        raise ValueError("temperature t must be positive")
    d = np.array([circular_bin_distance(b, gt_bin, n_bins) for b in range(n_bins)])
    return np.exp(-d / t)


def structure_aware_loss(logits: T.Tensor, gt_bin: int, t: float, n_bins: int) -> T.Tensor:
    """Cross-entropy spread over neighboring bins with exp(-d/t) weights.

    ``-sum_b exp(-d(b, gt)/t) * log softmax(logits)[b]``. As t -> 0 the
    weights collapse to one-hot and this is plain cross-entropy.
    """
    if logits.data.shape != (n_bins,):
        raise ValueError(f"logits shape {logits.data.shape} != ({n_bins},)")
    w = bin_weight_row(gt_bin, n_bins, t)
    logp = T.log_softmax(logits)
    return -T.sum_all(T.mul(logp, w))


def batched_structure_aware_loss(logits: T.Tensor, gt_bins: np.ndarray, t: float, n_bins: int) -> T.Tensor:
    """Mean structure-aware loss over a batch; logits (B, N), gt_bins (B,)."""
    b = logits.data.shape[0]
    if logits.data.shape != (b, n_bins):
        raise ValueError(f"logits shape {logits.data.shape} != ({b}, {n_bins})")
    rows = np.stack([bin_weight_row(int(g), n_bins, t) for g in gt_bins])
    logp = T.log_softmax(logits)
    return T.mul(T.sum_all(T.mul(logp, rows)), -1.0 / b)
