"""Trajectory level validation and correction of finished traces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import Config
from .geometry import points_in_polygon, wrap_angle
from .velocity_profile import angle_diff


class BuildingError(ValueError):
    pass


@dataclass(frozen=True)
class BuildingPolygon:
    vertices: tuple
    name: str = ""

    def __post_init__(self):
        ring = [tuple(map(float, v)) for v in self.vertices]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        if len(ring) < 3:
            raise BuildingError("a building polygon needs at least 3 vertices")
        from shapely.geometry import Polygon
        if not Polygon(ring).is_valid:
            raise BuildingError(f"building {self.name!r} is not a simple ring")
        object.__setattr__(self, "vertices", tuple(ring))

    def contains(self, e, n) -> np.ndarray:
        return points_in_polygon(e, n, self.vertices)


def load_buildings(path) -> list[BuildingPolygon]:
    """Polygon features of a GeoJSON FeatureCollection, coordinates already in
    the EMAGS world frame (meters).  Only exterior rings are used."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BuildingError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    feats = doc.get("features", []) if doc.get("type") == "FeatureCollection" else [doc]
    out = []
    for k, feat in enumerate(feats):
        geom = feat.get("geometry", feat)
        props = feat.get("properties") or {}
        name = str(props.get("name", f"building-{k}"))
        if geom.get("type") == "Polygon":
            out.append(BuildingPolygon(tuple(geom["coordinates"][0]), name))
        elif geom.get("type") == "MultiPolygon":
            for j, poly in enumerate(geom["coordinates"]):
                out.append(BuildingPolygon(tuple(poly[0]), f"{name}-{j}"))
    return out


@dataclass
class Decision:
    keep: bool
    reason: str = ""


def _centers(track) -> np.ndarray:
    return np.array([p.center for p in track.poses], dtype=float)


def max_acceleration_fraction(centers: np.ndarray, dt: float, baseline: float, limit: float) -> float:
    """Fraction of samples whose second difference over ``baseline`` seconds
    exceeds ``limit`` (m/s^2).  The baseline keeps cell quantization of the
    centers from reading as acceleration."""
    k = max(1, int(round(baseline / dt)))
    if len(centers) < 2 * k + 1:
        return 0.0
    acc = (centers[2 * k:] - 2 * centers[k:-k] + centers[:-2 * k]) / (k * dt) ** 2
    return float(np.mean(np.hypot(acc[:, 0], acc[:, 1]) > limit))


def validate_track(track, buildings, config: Config | None = None, dt: float = 0.1) -> Decision:
    cfg = config or Config()
    w, l = track.final_width, track.final_length
    if l > cfg.max_length or w > cfg.max_width or l < cfg.min_length:
        return Decision(False, "size")
    if w > 0 and l / w > cfg.max_aspect:
        return Decision(False, "aspect")
    observed = [p for p in track.poses if not p.coasted]
    if len(observed) < cfg.min_track_poses:
        return Decision(False, "too-short")
    c = _centers(track)
    if buildings:
        inside = np.zeros(len(c), dtype=bool)
        for b in buildings:
            inside |= b.contains(c[:, 0], c[:, 1])
        if inside.mean() > cfg.building_fraction:
            return Decision(False, "building")
    path = float(np.sum(np.hypot(*np.diff(c, axis=0).T))) if len(c) > 1 else 0.0
    vmax = max((p.speed for p in observed), default=0.0)
    if path < cfg.static_path and vmax < cfg.static_speed:
        return Decision(False, "static")
    if max_acceleration_fraction(c, dt, cfg.accel_baseline, cfg.max_accel) > cfg.accel_fraction:
        return Decision(False, "not-smooth")
    return Decision(True)


def correct_standing_orientation(track, standing_speed: float = 0.3):
    """Interpolate orientations across standing intervals (shortest angular
    path between the bounding moving poses); hold the nearest moving
    orientation at trace ends."""
    poses = track.poses
    n = len(poses)
    standing = [p.speed < standing_speed for p in poses]
    if not any(standing) or all(standing):
        return track
    phi = [p.orientation for p in poses]
    out = list(phi)
    i = 0
    while i < n:
        if not standing[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and standing[j + 1]:
            j += 1
        left = i - 1 if i > 0 else None
        right = j + 1 if j + 1 < n else None
        if left is not None and right is not None:
            a, b = phi[left], phi[right]
            d = float(angle_diff(b, a))
            span = right - left
            for k in range(i, j + 1):
                out[k] = wrap_angle(a + d * (k - left) / span)
        else:
            hold = phi[right] if left is None else phi[left]
            for k in range(i, j + 1):
                out[k] = hold
        i = j + 1
    new_poses = [p if math.isclose(o, p.orientation) else _reorient(p, o)
                 for p, o in zip(poses, out)]
    return replace(track, poses=new_poses)


def _reorient(pose, orientation):
    """Rotate a pose about its reference corner to a new orientation."""
    from .extraction import object_rect
    rect = object_rect(pose.ref_point, pose.corner_id, orientation, pose.width, pose.length)
    return replace(pose, orientation=orientation, center=(rect.center_e, rect.center_n))


def smooth_trajectory(track, window: int):
    """Centered moving average of centers (shrinking at the ends) and a
    circular moving average of orientations.  Dimensions are untouched."""
    if window <= 1:
        return track
    if window % 2 == 0:
        raise ValueError("smoothing window must be odd")
    h = window // 2
    c = _centers(track)
    phi = np.array([p.orientation for p in track.poses])
    n = len(c)
    poses = []
    for k, p in enumerate(track.poses):
        r = min(h, k, n - 1 - k)
        sl = slice(k - r, k + r + 1)
        ce = c[sl].mean(axis=0)
        o = math.atan2(np.sin(phi[sl]).mean(), np.cos(phi[sl]).mean())
        poses.append(replace(p, center=(float(ce[0]), float(ce[1])), orientation=o))
    return replace(track, poses=poses)
