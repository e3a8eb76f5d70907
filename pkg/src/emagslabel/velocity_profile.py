"""Object velocity profile: inverse-variance weighted object velocity plus
cell-wise moments used to decide whether a cell belongs to an object."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .grid_core import Cell, CellIndex


class NoValidCells(ValueError):
    pass


@dataclass(frozen=True)
class VelocityProfile:
    mean_ve: float
    mean_vn: float
    var_mean_ve: float
    var_mean_vn: float
    orientation: float
    speed: float
    # mean per-cell standard deviation (average of sqrt(variance) over cells)
    expected_var_ve: float
    expected_var_vn: float
    cell_mean_ve: float
    cell_std_ve: float
    cell_mean_vn: float
    cell_std_vn: float
    cell_mean_theta: float
    cell_std_theta: float     # circular std, sqrt(-2 ln R)
    cell_mean_speed: float
    cell_std_speed: float
    n_cells: int

    @property
    def speed_floor(self) -> float:
        # RMS of the per-axis expected standard deviations
        return math.sqrt(0.5 * (self.expected_var_ve ** 2 + self.expected_var_vn ** 2))

    @property
    def theta_floor(self) -> float:
        if self.cell_mean_speed <= 1e-9:
            return math.pi
        return min(math.pi, self.speed_floor / self.cell_mean_speed)

    def gate_std_theta(self) -> float:
        return max(self.cell_std_theta, self.theta_floor)

    def gate_std_speed(self) -> float:
        return max(self.cell_std_speed, self.speed_floor)

    @property
    def var_mean(self) -> float:
        return max(self.var_mean_ve, self.var_mean_vn)


def angle_diff(a, b):
    """Signed shortest angular difference a - b in (-pi, pi]."""
    d = np.mod(np.asarray(a) - np.asarray(b) + np.pi, 2 * np.pi) - np.pi
    return np.where(d == -np.pi, np.pi, d)


def circular_stats(theta: np.ndarray) -> tuple[float, float]:
    s = float(np.mean(np.sin(theta)))
    c = float(np.mean(np.cos(theta)))
    r = min(1.0, math.hypot(s, c))
    mean = math.atan2(s, c)
    std = math.sqrt(-2.0 * math.log(r)) if r > 0 else math.inf
    return mean, std


def profile_from_arrays(ve, vn, var_ve, var_vn) -> VelocityProfile:
    ve = np.asarray(ve, dtype=np.float64).ravel()
    vn = np.asarray(vn, dtype=np.float64).ravel()
    var_ve = np.asarray(var_ve, dtype=np.float64).ravel()
    var_vn = np.asarray(var_vn, dtype=np.float64).ravel()
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(var_ve) & np.isfinite(var_vn) & (var_ve > 0) & (var_vn > 0)
    if not ok.any():
        raise NoValidCells("no cell with a valid velocity covariance")
    ve, vn, var_ve, var_vn = ve[ok], vn[ok], var_ve[ok], var_vn[ok]

    w_e = 1.0 / var_ve
    w_n = 1.0 / var_vn
    var_mean_ve = 1.0 / w_e.sum()
    var_mean_vn = 1.0 / w_n.sum()
    mean_ve = var_mean_ve * float(np.sum(w_e * ve))
    mean_vn = var_mean_vn * float(np.sum(w_n * vn))

    theta = np.arctan2(vn, ve)
    speed = np.hypot(ve, vn)
    th_mean, th_std = circular_stats(theta)
    return VelocityProfile(
        mean_ve=mean_ve,
        mean_vn=mean_vn,
        var_mean_ve=var_mean_ve,
        var_mean_vn=var_mean_vn,
        orientation=math.atan2(mean_vn, mean_ve),
        speed=math.hypot(mean_ve, mean_vn),
        expected_var_ve=float(np.mean(np.sqrt(var_ve))),
        expected_var_vn=float(np.mean(np.sqrt(var_vn))),
        cell_mean_ve=float(ve.mean()),
        cell_std_ve=float(ve.std()),
        cell_mean_vn=float(vn.mean()),
        cell_std_vn=float(vn.std()),
        cell_mean_theta=th_mean,
        cell_std_theta=th_std,
        cell_mean_speed=float(speed.mean()),
        cell_std_speed=float(speed.std()),
        n_cells=int(ok.sum()),
    )


def compute_profile(cells: Iterable[tuple[Cell, CellIndex]]) -> VelocityProfile:
    recs = [c for c, _ in cells]
    if not recs:
        raise NoValidCells("empty cell set")
    return profile_from_arrays([c.v_e for c in recs], [c.v_n for c in recs],
                               [c.var_ve for c in recs], [c.var_vn for c in recs])


def matches_mask(profile: VelocityProfile, ve, vn, valid, band: float = 2.0) -> np.ndarray:
    """Vectorized membership test; invalid-velocity cells never match."""
    ve = np.asarray(ve)
    vn = np.asarray(vn)
    theta = np.arctan2(vn, ve)
    speed = np.hypot(ve, vn)
    eps = 1e-9
    ok_theta = np.abs(angle_diff(theta, profile.cell_mean_theta)) <= band * profile.gate_std_theta() + eps
    ok_speed = np.abs(speed - profile.cell_mean_speed) <= band * profile.gate_std_speed() + eps
    return np.asarray(valid) & ok_theta & ok_speed


def cell_matches(profile: VelocityProfile, cell: Cell, band: float = 2.0) -> bool:
    return bool(matches_mask(profile, cell.v_e, cell.v_n, cell.valid_velocity, band))
