"""Forward/backward temporal tracing of objects from init points."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import postprocess
from .config import Config
from .extraction import (Blob, Hypothesis, ObjectPose, Rejected, blob_profile,
                         connected_component_search, fit_blob_polygon, init_object,
                         object_rect, occupancy_threshold, predict_silhouette,
                         remove_outliers, select_search_seeds, update_dimensions)
from .geometry import OrientedRect, wrap_angle
from .grid_core import Canvas
from .preprocess import InitPoint, Preprocessed
from .velocity_profile import NoValidCells, VelocityProfile, angle_diff

log = logging.getLogger(__name__)


@dataclass
class ObjectTrack:
    id: int
    poses: list[ObjectPose]
    final_width: float
    final_length: float
    status: str = "active"          # active | completed | discarded
    spawn: InitPoint | None = None
    forward_reason: str = ""
    backward_reason: str = ""
    discard_reason: str = ""
    extents: list = field(default_factory=list)

    @property
    def t_range(self) -> tuple[int, int]:
        return self.poses[0].t, self.poses[-1].t

    def pose_at(self, t: int) -> ObjectPose | None:
        t0 = self.poses[0].t
        if 0 <= t - t0 < len(self.poses):
            return self.poses[t - t0]
        return None


class InitPointStack:
    """Remaining init points per slice.  Points are only ever removed."""

    def __init__(self, per_slice: list[list[InitPoint]]):
        self.remaining = [sorted(pts, key=lambda p: (-p.score, p.index.row, p.index.col))
                          for pts in per_slice]

    def __len__(self):
        return sum(len(p) for p in self.remaining)

    def pop(self) -> InitPoint | None:
        """Slice-major, then score-descending, then row-major."""
        for pts in self.remaining:
            if pts:
                return pts.pop(0)
        return None

    def remove_inside(self, t: int, rect: OrientedRect, canvas: Canvas) -> int:
        pts = self.remaining[t]
        if not pts:
            return 0
        rows = np.array([p.index.row for p in pts])
        cols = np.array([p.index.col for p in pts])
        e, n = canvas.centers(rows, cols)
        inside = rect.contains(e, n)
        self.remaining[t] = [p for p, hit in zip(pts, inside) if not hit]
        return int(inside.sum())


def remove_covered_init_points(track: ObjectTrack, stack: InitPointStack, canvas: Canvas) -> int:
    """Drop every remaining init point under the track's rectangles (dilated by
    one cell), slice by slice.  Returns the number removed."""
    removed = 0
    for pose in track.poses:
        removed += stack.remove_inside(pose.t, pose.rect.dilated(canvas.cell_size), canvas)
    return removed


# ------------------------------------------------------------- plausibility

@dataclass
class Verdict:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def plausibility_check(blob_cells: int, prev_cells: int, predicted_area_cells: float,
                       profile: VelocityProfile, prev_profile: VelocityProfile,
                       centroid, predicted_centroid, dt: float, cell_size: float,
                       coast: int = 0, config: Config | None = None) -> Verdict:
    cfg = config or Config()
    if blob_cells > cfg.area_jump * max(prev_cells, predicted_area_cells, 1):
        return Verdict(False, "area-jump")
    if (profile.speed > cfg.orientation_jump_min_speed
            and prev_profile.speed > cfg.orientation_jump_min_speed
            and abs(float(angle_diff(profile.orientation, prev_profile.orientation)))
            > math.radians(cfg.orientation_jump_deg)):
        return Verdict(False, "orientation-jump")
    limit = (2.0 * (prev_profile.speed * dt + 2.0 * math.sqrt(prev_profile.var_mean) * dt)
             + 2.0 * cell_size) * (1 + coast)
    if math.hypot(centroid[0] - predicted_centroid[0], centroid[1] - predicted_centroid[1]) > limit:
        return Verdict(False, "displacement")
    if coast > cfg.max_coast:
        return Verdict(False, "lost")
    return Verdict(True)


# ---------------------------------------------------------------- tracing

@dataclass
class TraceState:
    t: int
    rect: OrientedRect
    ref_point: tuple[float, float]
    corner_id: int
    blob_e: np.ndarray
    blob_n: np.ndarray
    centroid: tuple[float, float]
    n_cells: int
    profile: VelocityProfile
    po_ref: np.ndarray
    phi: float


def _state_from(canvas: Canvas, t: int, rect: OrientedRect, ref_point, corner_id: int,
                blob: Blob, profile, phi, po_min: float) -> TraceState:
    """Carry a reduced blob into the next step.  The expected inlier count and
    the reference occupancy statistics use only cells above ``po_min``, so
    boundary-layer cells kept by outlier removal cannot ratchet the blob
    outward step after step."""
    e, n = canvas.centers(blob.rows, blob.cols)
    po = canvas.po[t, blob.rows, blob.cols]
    confident = po >= po_min
    po_ref = po[confident] if confident.any() else po
    return TraceState(t, rect, (float(ref_point[0]), float(ref_point[1])), corner_id, e, n,
                      blob.centroid, max(1, int(confident.sum())), profile, po_ref, phi)


def trace_direction(canvas: Canvas, pre: Preprocessed, start: TraceState, direction: int,
                    history: list, config: Config, phase: str) -> tuple[list[ObjectPose], str]:
    """Extend a trace slice by slice in one temporal direction.

    ``history`` (observed blob extents) is appended in place.  Coasted poses
    are kept only when the object is reacquired afterwards.
    """
    cfg = config
    cs = canvas.cell_size
    n_t = canvas.n_slices
    state = start
    poses: list[ObjectPose] = []
    pending: list[ObjectPose] = []
    coast = 0
    while True:
        t_next = state.t + direction
        if t_next < 0 or t_next >= n_t:
            reason = "sequence-end"
            break
        dt = canvas.slice_dt(state.t, t_next)
        pred = predict_silhouette(canvas, state.rect, state.blob_e, state.blob_n, state.centroid,
                                  state.profile, dt, direction, cfg.k_pred)
        r, c = canvas.to_index(pred.object_rect.center_e, pred.object_rect.center_n)
        if not (canvas.inside(r, c) and canvas.in_extent[t_next, r, c]):
            reason = "left-area"
            break

        step = None
        seeds = select_search_seeds(canvas, t_next, pred, state.profile, cfg)
        if len(seeds):
            thr = occupancy_threshold(canvas.po[t_next, seeds.rows, seeds.cols], state.po_ref,
                                      cfg.occupancy_floor, cfg.occupancy_std_floor)
            first = connected_component_search(canvas, seeds, pre.borders[t_next], state.profile,
                                               thr, cfg.band)
            reduced = remove_outliers(canvas, first, state.n_cells, state.profile,
                                      cfg.band, cfg.outlier_po_fraction)
            if len(reduced) >= cfg.min_cluster_cells:
                try:
                    prof = blob_profile(canvas, reduced)
                except NoValidCells:
                    prof = state.profile
                pred_area = state.rect.area / (cs * cs)
                verdict = plausibility_check(len(reduced), state.n_cells, pred_area, prof,
                                             state.profile, reduced.centroid, pred.center, dt, cs,
                                             coast, cfg)
                if not verdict:
                    reason = verdict.reason
                    break
                step = (reduced, prof)

        if step is None:
            coast += 1
            if coast > cfg.max_coast:
                reason = "lost"
                break
            de = state.profile.mean_ve * dt * direction
            dn = state.profile.mean_vn * dt * direction
            rect = state.rect.translated(de, dn)
            ref = (state.ref_point[0] + de, state.ref_point[1] + dn)
            pending.append(ObjectPose(
                t=t_next, ref_point=ref, center=(rect.center_e, rect.center_n),
                orientation=rect.orientation, width=rect.width, length=rect.length,
                observed_extent=(0.0, 0.0), ve=state.profile.mean_ve, vn=state.profile.mean_vn,
                phase=phase, coasted=True, corner_id=state.corner_id))
            state = replace(state, t=t_next, rect=rect, ref_point=ref, blob_e=pred.blob_e,
                            blob_n=pred.blob_n, centroid=pred.center)
            continue

        reduced, prof = step
        coast = 0
        poses.extend(pending)
        pending = []
        phi = state.phi if prof.speed < cfg.standing_speed else wrap_angle(prof.orientation)
        brect, corner, k = fit_blob_polygon(canvas, reduced, phi, canvas.ego[t_next], cfg.occlusion_tol)
        history.append((brect.width, brect.length))
        w, l = update_dimensions(history, cfg.dimension_percentile)
        orect = object_rect(corner, k, phi, w, l)
        poses.append(ObjectPose(
            t=t_next, ref_point=(float(corner[0]), float(corner[1])),
            center=(orect.center_e, orect.center_n), orientation=phi, width=w, length=l,
            observed_extent=(brect.width, brect.length), ve=prof.mean_ve, vn=prof.mean_vn,
            phase=phase, corner_id=k))
        state = _state_from(canvas, t_next, orect, corner, k, reduced, prof, phi,
                            cfg.occupancy_floor)
    return poses, reason


def _rerender(pose: ObjectPose, width: float, length: float) -> ObjectPose:
    rect = object_rect(pose.ref_point, pose.corner_id, pose.orientation, width, length)
    return replace(pose, width=width, length=length, center=(rect.center_e, rect.center_n))


def trace_object(canvas: Canvas, pre: Preprocessed, hyp: Hypothesis, track_id: int,
                 spawn: InitPoint, config: Config) -> ObjectTrack:
    """Forward trace, backward trace seeded with the forward-refined
    dimensions, then a final sweep re-rendering every pose with the final
    dimensions anchored at its reference point."""
    cfg = config
    p0 = hyp.pose
    history = [p0.observed_extent]
    start_rect = object_rect(p0.ref_point, p0.corner_id, p0.orientation, p0.width, p0.length)
    start = _state_from(canvas, p0.t, start_rect, p0.ref_point, p0.corner_id, hyp.blob,
                        hyp.profile, p0.orientation, cfg.occupancy_floor)
    fwd, fwd_reason = trace_direction(canvas, pre, start, +1, history, cfg, "forward")

    w, l = update_dimensions(history, cfg.dimension_percentile)
    bstart = replace(start, rect=object_rect(p0.ref_point, p0.corner_id, p0.orientation, w, l))
    bwd, bwd_reason = trace_direction(canvas, pre, bstart, -1, history, cfg, "backward")

    fw, fl = update_dimensions(history, cfg.dimension_percentile)
    poses = list(reversed(bwd)) + [p0] + fwd
    poses = [_rerender(p, fw, fl) for p in poses]
    return ObjectTrack(track_id, poses, fw, fl, "active", spawn, fwd_reason, bwd_reason,
                       extents=list(history))


# --------------------------------------------------------------- top level

@dataclass
class RunResult:
    tracks: list[ObjectTrack]
    discarded: list[ObjectTrack]
    rejections: Counter
    initializations: int
    initial_points: int
    building_filter: bool

    def summary(self) -> dict:
        return {
            "objects_found": len(self.tracks),
            "objects_discarded": len(self.discarded),
            "discard_reasons": dict(Counter(t.discard_reason for t in self.discarded)),
            "init_rejections": dict(self.rejections),
            "initializations": self.initializations,
            "initial_init_points": self.initial_points,
            "building_filter": self.building_filter,
        }


def _duplicate_of(track: ObjectTrack, kept: list[ObjectTrack], overlap: float) -> bool:
    for other in kept:
        t0 = max(track.t_range[0], other.t_range[0])
        t1 = min(track.t_range[1], other.t_range[1])
        if t1 < t0:
            continue
        shared = 0
        for t in range(t0, t1 + 1):
            a, b = track.pose_at(t).rect.polygon(), other.pose_at(t).rect.polygon()
            inter = a.intersection(b).area
            small = min(a.area, b.area)
            if small > 0 and inter / small > overlap:
                shared += 1
        if shared > overlap * (t1 - t0 + 1):
            return True
    return False


def run_all(canvas: Canvas, pre: Preprocessed, config: Config | None = None,
            buildings=None) -> RunResult:
    """Drain the init point stack, tracing one object per surviving point."""
    cfg = config or Config()
    stack = InitPointStack(pre.init_points)
    initial = len(stack)
    tracks: list[ObjectTrack] = []
    discarded: list[ObjectTrack] = []
    rejections: Counter = Counter()
    inits = 0
    next_id = 0
    while True:
        point = stack.pop()
        if point is None:
            break
        inits += 1
        try:
            hyp = init_object(canvas, pre.borders, point, cfg)
        except Rejected as exc:
            rejections[exc.reason] += 1
            continue
        track = trace_object(canvas, pre, hyp, next_id, point, cfg)
        next_id += 1
        n_removed = remove_covered_init_points(track, stack, canvas)

        verdict = postprocess.validate_track(track, buildings or [], cfg, canvas.dt)
        if not verdict.keep:
            track.status = "discarded"
            track.discard_reason = verdict.reason
        else:
            track = postprocess.correct_standing_orientation(track, cfg.static_speed)
            if cfg.smoothing_window > 1:
                track = postprocess.smooth_trajectory(track, cfg.smoothing_window)
            if _duplicate_of(track, tracks, cfg.duplicate_overlap):
                track.status = "discarded"
                track.discard_reason = "duplicate"
            else:
                track.status = "completed"
        (tracks if track.status == "completed" else discarded).append(track)
        t0, t1 = track.t_range
        log.info("object %d: spawn (t=%d, col=%d, row=%d) interval %d..%d fwd=%s bwd=%s "
                 "dims %.2fx%.2f status=%s%s removed=%d", track.id, point.index.t,
                 point.index.col, point.index.row, t0, t1, track.forward_reason,
                 track.backward_reason, track.final_width, track.final_length, track.status,
                 f" ({track.discard_reason})" if track.discard_reason else "", n_removed)
    for k, tr in enumerate(tracks):
        tr.id = k
    return RunResult(tracks, discarded, rejections, inits, initial, buildings is not None)
