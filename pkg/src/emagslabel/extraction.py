"""Single time step machinery: object initialization, silhouette prediction,
search seed selection, connected component search, outlier removal and
rectangle / dimension fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .config import Config
from .geometry import OrientedRect, grid_line_cells, rect_from_corner, wrap_angle
from .grid_core import Canvas, CellIndex
from .velocity_profile import (NoValidCells, VelocityProfile, angle_diff, circular_stats,
                               matches_mask, profile_from_arrays)

EIGHT = np.ones((3, 3), dtype=bool)


class Rejected(Exception):
    """An init point that cannot become an object hypothesis."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class Blob:
    t: int
    rows: np.ndarray
    cols: np.ndarray
    centroid: tuple[float, float] = (math.nan, math.nan)

    def __len__(self):
        return len(self.rows)

    @property
    def cells(self) -> set[CellIndex]:
        return {CellIndex(int(c), int(r), self.t) for r, c in zip(self.rows, self.cols)}

    def subset(self, keep: np.ndarray, canvas: Canvas | None = None) -> "Blob":
        b = Blob(self.t, self.rows[keep], self.cols[keep])
        if canvas is not None:
            b.centroid = blob_centroid(canvas, b)
        return b


def make_blob(canvas: Canvas, t: int, rows, cols) -> Blob:
    b = Blob(t, np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))
    b.centroid = blob_centroid(canvas, b)
    return b


def blob_centroid(canvas: Canvas, blob: Blob) -> tuple[float, float]:
    if len(blob) == 0:
        return (math.nan, math.nan)
    e, n = canvas.centers(blob.rows, blob.cols)
    w = canvas.po[blob.t, blob.rows, blob.cols]
    if w.sum() <= 0:
        w = np.ones_like(w)
    return (float(np.sum(w * e) / w.sum()), float(np.sum(w * n) / w.sum()))


@dataclass
class ObjectPose:
    t: int
    ref_point: tuple[float, float]
    center: tuple[float, float]
    orientation: float
    width: float
    length: float
    observed_extent: tuple[float, float]
    ve: float = 0.0
    vn: float = 0.0
    phase: str = "init"
    coasted: bool = False
    corner_id: int | None = None

    @property
    def rect(self) -> OrientedRect:
        return OrientedRect(self.center[0], self.center[1], self.orientation, self.length, self.width)

    @property
    def speed(self) -> float:
        return math.hypot(self.ve, self.vn)


@dataclass
class SearchSeeds:
    t: int
    rows: np.ndarray
    cols: np.ndarray
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.rows)

    @property
    def seeds(self) -> list[CellIndex]:
        return [CellIndex(int(c), int(r), self.t) for r, c in zip(self.rows, self.cols)]


# ---------------------------------------------------------------- thresholds

def occupancy_threshold(seed_po, ref_po=None, floor: float = 0.55, std_floor: float = 0.05) -> float:
    """Lower occupancy cut for component growth: mean seed P_O minus two
    standard deviations.  The spread comes from the seeds or, when wider, a
    reference cell set (the previous reduced blob)."""
    seed_po = np.asarray(seed_po, dtype=float)
    std = float(seed_po.std()) if seed_po.size > 1 else 0.0
    if ref_po is not None and len(ref_po) > 1:
        std = max(std, float(np.std(ref_po)))
    std = max(std, std_floor)
    return max(floor, float(seed_po.mean()) - 2.0 * std)


# ---------------------------------------------------------- component search

def expansion_mask(canvas: Canvas, t: int, border: np.ndarray, occ_threshold: float,
                   profile: VelocityProfile | None, band: float) -> np.ndarray:
    """Cells allowed to continue a component search (off border, occupied
    enough, matching the profile when one is given)."""
    ok = (~border) & (canvas.po[t] >= occ_threshold) & canvas.in_extent[t]
    if profile is not None:
        ok &= matches_mask(profile, canvas.ve[t], canvas.vn[t], canvas.valid[t], band)
    return ok


def connected_component_search(canvas: Canvas, seeds: SearchSeeds, border: np.ndarray,
                               profile: VelocityProfile | None, occ_threshold: float,
                               band: float = 2.0) -> Blob:
    """Grow a component from the seeds.

    Every neighbor of an expanded cell joins the component, but only
    neighbors passing :func:`expansion_mask` expand further, so the result is
    the expanded region plus at most one layer of boundary cells.  Seeds
    always expand.
    """
    t = seeds.t
    h, w = canvas.po.shape[1:]
    ok = expansion_mask(canvas, t, border, occ_threshold, profile, band)
    seed_mask = np.zeros((h, w), dtype=bool)
    seed_mask[seeds.rows, seeds.cols] = True
    # passing cells reachable from a seed: components of (ok | seeds) holding a seed
    labels, _ = ndimage.label(ok | seed_mask, structure=EIGHT)
    hit = np.unique(labels[seed_mask])
    hit = hit[hit > 0]
    expanded = np.isin(labels, hit) & (ok | seed_mask)
    comp = ndimage.binary_dilation(expanded, structure=EIGHT)
    rows, cols = np.nonzero(comp)
    return make_blob(canvas, t, rows, cols)


# ------------------------------------------------------------ outlier removal

def remove_outliers(canvas: Canvas, blob: Blob, n_prev: int, profile: VelocityProfile,
                    band: float = 2.0, po_fraction: float = 0.9) -> Blob:
    """Shrink a first blob to the cells consistent with its presumed inliers.

    The ``n_prev`` cells with the best combined rank of high P_O and low
    orientation deviation define mean and std of P_O, orientation and speed.
    Stds are floored by the profile's expected spread; P_O is cut one-sided,
    never above ``po_fraction * max P_O``.  Cells without valid velocity are
    judged on occupancy alone.
    """
    t = blob.t
    m = len(blob)
    if m == 0:
        return blob
    rows, cols = blob.rows, blob.cols
    po = canvas.po[t, rows, cols]
    valid = canvas.valid[t, rows, cols]
    theta = canvas.theta[t, rows, cols]
    speed = canvas.speed[t, rows, cols]

    dev = np.where(valid, np.abs(angle_diff(theta, profile.cell_mean_theta)), np.inf)
    rank = rankdata(-po, method="average") + rankdata(dev, method="average")
    order = np.lexsort((cols, rows, rank))
    n = max(1, min(int(n_prev), m))
    inl = order[:n]

    po_in = po[inl]
    po_cut = min(po_in.mean() - band * po_in.std(), po_fraction * po.max())
    keep = po >= po_cut - 1e-12

    v_in = inl[valid[inl]]
    if v_in.size:
        th_mean, th_std = circular_stats(theta[v_in])
        sp_mean = float(speed[v_in].mean())
        sp_std = float(speed[v_in].std())
        sp_std = max(sp_std, profile.speed_floor)
        th_floor = math.pi if sp_mean <= 1e-9 else min(math.pi, profile.speed_floor / sp_mean)
        th_std = max(th_std, th_floor)
        ok_v = ((np.abs(angle_diff(theta, th_mean)) <= band * th_std + 1e-9)
                & (np.abs(speed - sp_mean) <= band * sp_std + 1e-9))
        keep &= ~valid | ok_v
    if not keep.any():
        keep = np.zeros(m, dtype=bool)
        keep[inl] = True
    return blob.subset(keep, canvas)


# ----------------------------------------------------------------- prediction

@dataclass
class Prediction:
    direction: int
    dt: float
    object_rect: OrientedRect        # dilated object region
    blob_e: np.ndarray               # translated previous blob cell centers
    blob_n: np.ndarray
    region_rows: np.ndarray          # dilated blob region
    region_cols: np.ndarray
    center: tuple[float, float]      # predicted blob centroid
    silhouette_cells: int            # cells covered by the undilated translated blob


def predict_silhouette(canvas: Canvas, rect: OrientedRect, blob_e, blob_n, centroid,
                       profile: VelocityProfile, dt: float, direction: int,
                       k_pred: float = 2.0) -> Prediction:
    """Constant-velocity prediction of the object rectangle and the visible blob."""
    cs = canvas.cell_size
    de = profile.mean_ve * dt * direction
    dn = profile.mean_vn * dt * direction
    margin = k_pred * math.sqrt(profile.var_mean) * dt
    obj = rect.translated(de, dn).dilated(margin + cs)

    be = np.asarray(blob_e, dtype=float) + de
    bn = np.asarray(blob_n, dtype=float) + dn
    rows, cols = canvas.to_index(be, bn)
    cells = np.unique(np.stack([rows, cols], axis=1), axis=0) if len(rows) else np.zeros((0, 2), int)
    r = int(round(margin / cs)) + 1
    if len(cells):
        off = np.arange(-r, r + 1)
        dr, dc = np.meshgrid(off, off, indexing="ij")
        grown = (cells[:, None, :] + np.stack([dr.ravel(), dc.ravel()], axis=1)[None]).reshape(-1, 2)
        grown = np.unique(grown, axis=0)
        inside = canvas.inside(grown[:, 0], grown[:, 1])
        grown = grown[inside]
    else:
        grown = cells
    return Prediction(direction, dt, obj, be, bn, grown[:, 0], grown[:, 1],
                      (centroid[0] + de, centroid[1] + dn), len(cells))


# -------------------------------------------------------------- seed choice

def seed_cap(silhouette_area: float, seed_area: float = 0.5) -> int:
    return max(1, int(math.floor(silhouette_area / seed_area + 1e-9)))


def select_search_seeds(canvas: Canvas, t: int, pred: Prediction, profile: VelocityProfile,
                        config: Config | None = None) -> SearchSeeds:
    """Lowest-loss cells of the predicted blob region, thinned to one seed per
    ``seed_area`` of silhouette and spaced at least sqrt(seed_area) apart.

    Ties in loss go to the higher P_O, then row-major order.  Returns empty
    seeds when no region cell is occupied and matches the profile.
    """
    cfg = config or Config()
    cs = canvas.cell_size
    rows, cols = pred.region_rows, pred.region_cols
    empty = SearchSeeds(t, np.zeros(0, np.int64), np.zeros(0, np.int64))
    if len(rows) == 0:
        return empty
    po = canvas.po[t, rows, cols]
    valid = canvas.valid[t, rows, cols]
    ve, vn = canvas.ve[t, rows, cols], canvas.vn[t, rows, cols]
    cand = (valid & (po > cfg.occupancy_floor) & canvas.in_extent[t, rows, cols]
            & matches_mask(profile, ve, vn, valid, cfg.band))
    if not cand.any():
        return empty
    rows, cols, po = rows[cand], cols[cand], po[cand]
    theta = canvas.theta[t, rows, cols]
    speed = canvas.speed[t, rows, cols]
    e, n = canvas.centers(rows, cols)
    diag = math.hypot((pred.region_cols.max() - pred.region_cols.min() + 1) * cs,
                      (pred.region_rows.max() - pred.region_rows.min() + 1) * cs)
    w1, w2, w3, w4 = cfg.loss_weights
    loss = (w1 * (1.0 - po)
            + w2 * np.abs(angle_diff(theta, profile.cell_mean_theta)) / math.pi
            + w3 * np.hypot(e - pred.center[0], n - pred.center[1]) / diag
            + w4 * np.abs(speed - profile.cell_mean_speed) / (profile.cell_mean_speed + 1e-6))
    order = np.lexsort((cols, rows, -po, loss))
    cap = seed_cap(pred.silhouette_cells * cs * cs, cfg.seed_area)
    spacing = math.sqrt(cfg.seed_area) / cs
    chosen: list[int] = []
    for k in order:
        if len(chosen) >= cap:
            break
        if all(math.hypot(rows[k] - rows[j], cols[k] - cols[j]) >= spacing for j in chosen):
            chosen.append(int(k))
    idx = np.array(chosen, dtype=np.int64)
    return SearchSeeds(t, rows[idx], cols[idx], loss[idx])


# ------------------------------------------------------------ rectangle fit

def fit_rect(e, n, orientation: float, cs: float) -> OrientedRect:
    """Bounding rectangle of cell centers at a fixed orientation, padded by
    half a cell on every side."""
    e = np.asarray(e, dtype=float)
    n = np.asarray(n, dtype=float)
    u = (math.cos(orientation), math.sin(orientation))
    v = (-u[1], u[0])
    a = e * u[0] + n * u[1]
    b = e * v[0] + n * v[1]
    a0, a1 = a.min() - 0.5 * cs, a.max() + 0.5 * cs
    b0, b1 = b.min() - 0.5 * cs, b.max() + 0.5 * cs
    ca, cb = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
    ce = ca * u[0] + cb * v[0]
    cn = ca * u[1] + cb * v[1]
    return OrientedRect(ce, cn, orientation, a1 - a0, b1 - b0)


def occlusion_score(canvas: Canvas, t: int, ego, point, rect: OrientedRect | None = None) -> float:
    """Sum of P_O over the cells a sight line from ego to point crosses,
    leaving out cells whose centers lie in ``rect``."""
    cs = canvas.cell_size
    x0 = (ego[0] - canvas.origin_e) / cs
    y0 = (ego[1] - canvas.origin_n) / cs
    x1 = (point[0] - canvas.origin_e) / cs
    y1 = (point[1] - canvas.origin_n) / cs
    cells = np.array(grid_line_cells(x0, y0, x1, y1), dtype=np.int64)
    cols, rows = cells[:, 0], cells[:, 1]
    inside = canvas.inside(rows, cols)
    rows, cols = rows[inside], cols[inside]
    if rect is not None and len(rows):
        ce, cn = canvas.centers(rows, cols)
        keep = ~rect.contains(ce, cn)
        rows, cols = rows[keep], cols[keep]
    return float(canvas.po[t, rows, cols].sum())


def fit_blob_polygon(canvas: Canvas, blob: Blob, orientation: float, ego,
                     occlusion_tol: float = 0.5) -> tuple[OrientedRect, np.ndarray, int]:
    """Blob rectangle at the profile orientation and its reference corner.

    The reference corner minimizes (occlusion score, distance to ego); scores
    within ``occlusion_tol`` of the best count as equal.
    Returns (rect, corner, corner index).
    """
    e, n = canvas.centers(blob.rows, blob.cols)
    rect = fit_rect(e, n, orientation, canvas.cell_size)
    corners = rect.corners()
    scores = np.array([occlusion_score(canvas, blob.t, ego, c, rect) for c in corners])
    dist = np.hypot(corners[:, 0] - ego[0], corners[:, 1] - ego[1])
    cand = np.nonzero(scores <= scores.min() + occlusion_tol)[0]
    k = int(cand[np.argmin(dist[cand])])
    return rect, corners[k], k


def update_dimensions(history, percentile: float = 90.0) -> tuple[float, float]:
    """Width and length as the given percentile of the observed extents."""
    arr = np.asarray(history, dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("empty extent history")
    return (float(np.percentile(arr[:, 0], percentile)),
            float(np.percentile(arr[:, 1], percentile)))


# ------------------------------------------------------------ initialization

@dataclass
class Hypothesis:
    blob: Blob
    profile: VelocityProfile
    pose: ObjectPose
    blob_rect: OrientedRect
    corner_id: int
    po_ref: np.ndarray


def blob_profile(canvas: Canvas, blob: Blob) -> VelocityProfile:
    t, r, c = blob.t, blob.rows, blob.cols
    return profile_from_arrays(canvas.ve[t, r, c], canvas.vn[t, r, c],
                               canvas.var_ve[t, r, c], canvas.var_vn[t, r, c])


def init_object(canvas: Canvas, borders: np.ndarray, point, config: Config | None = None) -> Hypothesis:
    """Coarse-to-fine object hypothesis from one init point.

    Raises :class:`Rejected` with reason ``prerequisite`` (velocity
    uncertainty too high or invalid) or ``degenerate`` (too few cells).
    """
    cfg = config or Config()
    idx = point.index
    t, r, c = idx.t, idx.row, idx.col
    if not canvas.valid[t, r, c]:
        raise Rejected("prerequisite")
    if not (canvas.var_ve[t, r, c] < cfg.init_max_variance and canvas.var_vn[t, r, c] < cfg.init_max_variance):
        raise Rejected("prerequisite")

    h, w = canvas.po.shape[1:]
    r0, r1 = max(0, r - 1), min(h, r + 2)
    c0, c1 = max(0, c - 1), min(w, c + 2)
    nb = canvas.po[t, r0:r1, c0:c1].ravel()
    nb = nb[nb > 0.5]
    thr = occupancy_threshold([canvas.po[t, r, c]], nb if nb.size else None,
                              cfg.occupancy_floor, cfg.occupancy_std_floor)
    seeds = SearchSeeds(t, np.array([r]), np.array([c]))

    coarse = connected_component_search(canvas, seeds, borders[t], None, thr, cfg.band)
    inner = coarse.subset(canvas.po[t, coarse.rows, coarse.cols] >= thr)
    try:
        prof = blob_profile(canvas, inner)
    except NoValidCells:
        raise Rejected("degenerate") from None
    fine = connected_component_search(canvas, seeds, borders[t], prof, thr, cfg.band)
    ok = expansion_mask(canvas, t, borders[t], thr, prof, cfg.band)[fine.rows, fine.cols]
    n_inner = int(ok.sum())
    if n_inner < cfg.min_cluster_cells:
        raise Rejected("degenerate")
    try:
        prof = blob_profile(canvas, fine.subset(ok))
    except NoValidCells:
        raise Rejected("degenerate") from None
    reduced = remove_outliers(canvas, fine, n_inner, prof, cfg.band, cfg.outlier_po_fraction)
    if len(reduced) < cfg.min_cluster_cells:
        raise Rejected("degenerate")

    ego = canvas.ego[t]
    phi = wrap_angle(prof.orientation)
    rect, corner, k = fit_blob_polygon(canvas, reduced, phi, ego, cfg.occlusion_tol)
    pose = ObjectPose(t=t, ref_point=(float(corner[0]), float(corner[1])),
                      center=(rect.center_e, rect.center_n), orientation=phi,
                      width=rect.width, length=rect.length,
                      observed_extent=(rect.width, rect.length),
                      ve=prof.mean_ve, vn=prof.mean_vn, phase="init", corner_id=k)
    po_ref = canvas.po[t, reduced.rows, reduced.cols]
    return Hypothesis(reduced, prof, pose, rect, k, po_ref)


def object_rect(corner, corner_id: int, orientation: float, width: float, length: float) -> OrientedRect:
    return rect_from_corner(corner, corner_id, orientation, length, width)
