"""Preprocessing of the aligned stack: 3-D smoothing, spatial border masks,
temporal traversal detection and init point clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .config import Config
from .grid_core import Canvas, CellIndex

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class InitPoint:
    index: CellIndex
    score: float


def smooth_3d(po: np.ndarray, sigma_spatial: float, sigma_temporal: float) -> np.ndarray:
    """Gaussian-smoothed P_O volume of shape (T, H, W)."""
    po = np.asarray(po, dtype=np.float64)
    if sigma_spatial <= 0 and sigma_temporal <= 0:
        return po.copy()
    return ndimage.gaussian_filter(po, sigma=(sigma_temporal, sigma_spatial, sigma_spatial),
                                   mode="nearest", truncate=4.0)


def _otsu(values: np.ndarray) -> float:
    if values.size == 0 or np.ptp(values) == 0:
        return np.inf
    return float(threshold_otsu(values))


def border_mask_slice(field2d: np.ndarray, min_gradient: float = 0.02) -> np.ndarray:
    """Cells at spatial occupancy inflections of one smoothed slice.

    A cell is marked when its gradient magnitude passes the Otsu split (and an
    absolute floor) and the second derivative along the gradient changes sign
    between it and a neighbor on the gradient line.
    """
    gy, gx = np.gradient(field2d)
    mag = np.hypot(gx, gy)
    thr = max(_otsu(mag.ravel()), min_gradient)
    strong = mag > thr
    if not strong.any():
        return np.zeros(field2d.shape, dtype=bool)
    gyy, gyx = np.gradient(gy)
    gxy, gxx = np.gradient(gx)
    fxy = 0.5 * (gxy + gyx)
    with np.errstate(invalid="ignore", divide="ignore"):
        d2 = (gx * gx * gxx + 2 * gx * gy * fxy + gy * gy * gyy) / (mag * mag)
    d2 = np.nan_to_num(d2)

    h, w = field2d.shape
    rows, cols = np.nonzero(strong)
    ux = gx[rows, cols] / mag[rows, cols]
    uy = gy[rows, cols] / mag[rows, cols]
    step_c = np.rint(ux).astype(int)
    step_r = np.rint(uy).astype(int)
    here = d2[rows, cols]
    hit = np.zeros(rows.shape, dtype=bool)
    for sgn in (1, -1):
        r2 = np.clip(rows + sgn * step_r, 0, h - 1)
        c2 = np.clip(cols + sgn * step_c, 0, w - 1)
        hit |= here * d2[r2, c2] <= 0
    mask = np.zeros(field2d.shape, dtype=bool)
    mask[rows[hit], cols[hit]] = True
    return mask


def detect_borders(smoothed: np.ndarray, min_gradient: float = 0.02, jobs: int = 1) -> np.ndarray:
    """Border masks for every slice, as a bool volume (T, H, W)."""
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as pool:
            masks = list(pool.map(lambda f: border_mask_slice(f, min_gradient), smoothed))
    else:
        masks = [border_mask_slice(f, min_gradient) for f in smoothed]
    return np.stack(masks)


class Traversals:
    """Per-cell temporal traversal intervals, held as an active-mask volume."""

    def __init__(self, active: np.ndarray):
        self.active = active

    def intervals(self, row: int, col: int) -> list[tuple[int, int]]:
        prof = self.active[:, row, col]
        out = []
        t = 0
        n = len(prof)
        while t < n:
            if prof[t]:
                start = t
                while t + 1 < n and prof[t + 1]:
                    t += 1
                out.append((start, t))
            t += 1
        return out


def detect_traversals(smoothed: np.ndarray, in_extent: np.ndarray | None = None,
                      min_range: float = 0.3) -> Traversals:
    """Mark (t, row, col) samples lying inside a rise-then-fall of a cell's profile.

    The per-cell threshold is the midpoint of the temporal min and max.  A run
    above it counts only when an in-extent sample below the threshold precedes
    and follows it, so a static wall (no fall) or a cell entering the map
    (no genuine rise) is not marked.
    """
    vol = np.asarray(smoothed)
    if in_extent is None:
        in_extent = np.ones(vol.shape, dtype=bool)
    big = np.where(in_extent, vol, np.nan)
    with np.errstate(invalid="ignore"):
        lo = np.nanmin(np.where(in_extent, vol, np.inf), axis=0)
        hi = np.nanmax(np.where(in_extent, vol, -np.inf), axis=0)
    dynamic = (hi - lo) >= min_range
    mid = 0.5 * (lo + hi)
    above = (big > mid) & in_extent & dynamic
    below = (big <= mid) & in_extent

    t_n = vol.shape[0]
    fwd = np.zeros_like(above)
    bwd = np.zeros_like(above)
    for t in range(1, t_n):
        fwd[t] = above[t] & np.where(above[t - 1], fwd[t - 1], below[t - 1])
    for t in range(t_n - 2, -1, -1):
        bwd[t] = above[t] & np.where(above[t + 1], bwd[t + 1], below[t + 1])
    return Traversals(fwd & bwd)


def cluster_init_points(traversals: Traversals, borders: np.ndarray, po: np.ndarray,
                        min_cluster_cells: int = 4, min_peak: float = 0.6) -> list[list[InitPoint]]:
    """Init points per slice: one per border-bounded 8-connected cluster of
    traversed, clearly occupied cells.

    The point is the cluster cell nearest the occupancy-weighted centroid, so
    it always lies on the cluster and never on the border mask.
    """
    out = []
    for t in range(po.shape[0]):
        act = traversals.active[t] & ~borders[t] & (po[t] > min_peak)
        labels, n = ndimage.label(act, structure=EIGHT)
        pts = []
        if n:
            objs = ndimage.find_objects(labels)
            for lab, sl in enumerate(objs, start=1):
                sub = labels[sl] == lab
                count = int(sub.sum())
                if count < min_cluster_cells:
                    continue
                rr, cc = np.nonzero(sub)
                rr = rr + sl[0].start
                cc = cc + sl[1].start
                wts = po[t, rr, cc]
                cr = np.sum(wts * rr) / wts.sum()
                ccen = np.sum(wts * cc) / wts.sum()
                k = int(np.argmin((rr - cr) ** 2 + (cc - ccen) ** 2))
                pts.append(InitPoint(CellIndex(int(cc[k]), int(rr[k]), t), float(count)))
        out.append(pts)
    return out


@dataclass
class Preprocessed:
    smoothed: np.ndarray
    borders: np.ndarray
    traversals: Traversals
    init_points: list[list[InitPoint]]

    @property
    def n_init_points(self) -> int:
        return sum(len(p) for p in self.init_points)


def preprocess(canvas: Canvas, config: Config | None = None, jobs: int = 1) -> Preprocessed:
    cfg = config or Config()
    sm = smooth_3d(canvas.po, cfg.sigma_spatial, cfg.sigma_temporal)
    borders = detect_borders(sm, cfg.min_gradient, jobs=jobs)
    trav = detect_traversals(sm, canvas.in_extent, cfg.traversal_min_range)
    pts = cluster_init_points(trav, borders, canvas.po, cfg.min_cluster_cells, cfg.traversal_min_peak)
    return Preprocessed(sm, borders, trav, pts)


def write_debug_pgm(path, canvas: Canvas, pre: Preprocessed, t: int) -> None:
    """Grayscale dump of slice ``t``: occupancy background, border cells at 128,
    init points at 255.  North is up."""
    img = ((1.0 - canvas.po[t]) * 200).astype(np.uint8)
    img[pre.borders[t]] = 128
    for p in pre.init_points[t]:
        img[p.index.row, p.index.col] = 255
    img = img[::-1]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
