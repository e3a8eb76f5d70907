"""Planar geometry helpers: oriented rectangles, grid line traversal,
point-in-polygon and rectangle IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon


def wrap_angle(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class OrientedRect:
    center_e: float
    center_n: float
    orientation: float   # direction of the length axis
    length: float
    width: float

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.array([math.cos(self.orientation), math.sin(self.orientation)])
        v = np.array([-u[1], u[0]])
        return u, v

    def corners(self) -> np.ndarray:
        """Corners as (4, 2), ordered (+u+v, -u+v, -u-v, +u-v)."""
        u, v = self.axes
        c = np.array([self.center_e, self.center_n])
        hl, hw = 0.5 * self.length, 0.5 * self.width
        return np.array([c + hl * u + hw * v, c - hl * u + hw * v,
                         c - hl * u - hw * v, c + hl * u - hw * v])

    def contains(self, e, n, margin: float = 0.0) -> np.ndarray:
        u, v = self.axes
        de = np.asarray(e) - self.center_e
        dn = np.asarray(n) - self.center_n
        a = de * u[0] + dn * u[1]
        b = de * v[0] + dn * v[1]
        tol = 1e-9
        return ((np.abs(a) <= 0.5 * self.length + margin + tol)
                & (np.abs(b) <= 0.5 * self.width + margin + tol))

    def translated(self, de: float, dn: float) -> "OrientedRect":
        return OrientedRect(self.center_e + de, self.center_n + dn, self.orientation,
                            self.length, self.width)

    def dilated(self, margin: float) -> "OrientedRect":
        return OrientedRect(self.center_e, self.center_n, self.orientation,
                            self.length + 2 * margin, self.width + 2 * margin)

    @property
    def area(self) -> float:
        return self.length * self.width

    def polygon(self) -> Polygon:
        return Polygon(self.corners())


def rect_iou(a: OrientedRect, b: OrientedRect) -> float:
    pa, pb = a.polygon(), b.polygon()
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0 else 0.0


CORNER_SIGNS = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]])


def rect_from_corner(corner: np.ndarray, corner_id: int, orientation: float,
                     length: float, width: float) -> OrientedRect:
    """Rectangle of the given size sharing corner ``corner_id`` (in
    :meth:`OrientedRect.corners` order) with a rectangle at ``orientation``."""
    su, sv = CORNER_SIGNS[corner_id]
    u = np.array([math.cos(orientation), math.sin(orientation)])
    v = np.array([-u[1], u[0]])
    c = np.asarray(corner) - su * 0.5 * length * u - sv * 0.5 * width * v
    return OrientedRect(float(c[0]), float(c[1]), orientation, length, width)


def grid_line_cells(x0: float, y0: float, x1: float, y1: float) -> list[tuple[int, int]]:
    """Every integer cell (ix, iy) the segment passes through, in order.

    Coordinates are in cell units (cell (i, j) spans [i, i+1) x [j, j+1)).
    Amanatides-Woo traversal; on exact corner crossings both side cells are
    skipped in favor of the diagonal, which is the usual convention.
    """
    ix, iy = math.floor(x0), math.floor(y0)
    ex, ey = math.floor(x1), math.floor(y1)
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1

    # parameter of the next grid line crossing, computed from the line itself
    # rather than accumulated, so exact corner hits tie exactly
    def next_t(i, a0, d):
        if d == 0:
            return math.inf
        return ((i + 1 if d > 0 else i) - a0) / d

    def crosses(t, step):
        # an endpoint on a grid line belongs to the cell above it, so a
        # crossing at t = 1 only counts when stepping in the positive direction
        return t < 1.0 or (t == 1.0 and step > 0)

    t_mx, t_my = next_t(ix, x0, dx), next_t(iy, y0, dy)
    cells = [(ix, iy)]
    n_max = abs(ex - ix) + abs(ey - iy)
    while (ix, iy) != (ex, ey) and len(cells) <= n_max + 1:
        go_x = t_mx <= t_my and crosses(t_mx, step_x)
        go_y = t_my <= t_mx and crosses(t_my, step_y)
        if not (go_x or go_y):
            break
        if go_x:
            ix += step_x
            t_mx = next_t(ix, x0, dx)
        if go_y:
            iy += step_y
            t_my = next_t(iy, y0, dy)
        cells.append((ix, iy))
    return cells


def points_in_polygon(px, py, ring) -> np.ndarray:
    """Even-odd rule with points on the boundary counted as inside."""
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    ring = np.asarray(ring, dtype=float)
    if np.allclose(ring[0], ring[-1]):
        ring = ring[:-1]
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        xa, ya = ring[i]
        xb, yb = ring[(i + 1) % n]
        cond = (ya > py) != (yb > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= cond & (px < xcross)
        # boundary test
        cross = (xb - xa) * (py - ya) - (yb - ya) * (px - xa)
        within = ((np.minimum(xa, xb) - 1e-9 <= px) & (px <= np.maximum(xa, xb) + 1e-9)
                  & (np.minimum(ya, yb) - 1e-9 <= py) & (py <= np.maximum(ya, yb) + 1e-9))
        seg_len = math.hypot(xb - xa, yb - ya) or 1.0
        on_edge |= within & (np.abs(cross) / seg_len <= 1e-9)
    return inside | on_edge


def segment_intersects(p0e, p0n, p1e, p1n, a, b) -> np.ndarray:
    """Whether segments p0->p1 (arrays) properly cross segment a->b, with the
    crossing strictly before p1."""
    p0e = np.asarray(p0e, dtype=float)
    p0n = np.asarray(p0n, dtype=float)
    re = np.asarray(p1e, dtype=float) - p0e
    rn = np.asarray(p1n, dtype=float) - p0n
    se, sn = b[0] - a[0], b[1] - a[1]
    denom = re * sn - rn * se
    qe, qn = a[0] - p0e, a[1] - p0n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qe * sn - qn * se) / denom
        s = (qe * rn - qn * re) / denom
    return (np.abs(denom) > 1e-12) & (t > 0) & (t < 1 - 1e-9) & (s >= 0) & (s <= 1)
