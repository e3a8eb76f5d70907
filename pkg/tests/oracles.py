"""Independent reference implementations used by the tests."""

import math
from collections import deque
from fractions import Fraction


def profile_oracle(cells):
    """Velocity profile fields from plain loops over (ve, vn, var_ve, var_vn)."""
    cells = [c for c in cells if math.isfinite(c[2]) and math.isfinite(c[3]) and c[2] > 0 and c[3] > 0]
    n = len(cells)
    se = sum(1.0 / c[2] for c in cells)
    sn = sum(1.0 / c[3] for c in cells)
    mean_ve = sum(c[0] / c[2] for c in cells) / se
    mean_vn = sum(c[1] / c[3] for c in cells) / sn
    ve = [c[0] for c in cells]
    vn = [c[1] for c in cells]
    th = [math.atan2(c[1], c[0]) for c in cells]
    sp = [math.hypot(c[0], c[1]) for c in cells]

    def mean(x):
        return sum(x) / len(x)

    def std(x):
        m = mean(x)
        return math.sqrt(sum((v - m) ** 2 for v in x) / len(x))

    s = mean([math.sin(a) for a in th])
    c = mean([math.cos(a) for a in th])
    r = min(1.0, math.hypot(s, c))
    return {
        "mean_ve": mean_ve, "mean_vn": mean_vn,
        "var_mean_ve": 1.0 / se, "var_mean_vn": 1.0 / sn,
        "orientation": math.atan2(mean_vn, mean_ve),
        "speed": math.hypot(mean_ve, mean_vn),
        "expected_var_ve": mean([math.sqrt(cc[2]) for cc in cells]),
        "expected_var_vn": mean([math.sqrt(cc[3]) for cc in cells]),
        "cell_mean_ve": mean(ve), "cell_std_ve": std(ve),
        "cell_mean_vn": mean(vn), "cell_std_vn": std(vn),
        "cell_mean_theta": math.atan2(s, c),
        "cell_std_theta": math.sqrt(-2.0 * math.log(r)) if r > 0 else math.inf,
        "cell_mean_speed": mean(sp), "cell_std_speed": std(sp),
        "n_cells": n,
    }


def circ_dist(a, b):
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def flood_fill_oracle(passes, seeds, h, w):
    """Queue-based flood fill: every 8-neighbor of an expanding cell joins the
    component; only cells with ``passes(r, c)`` true (and seeds) expand."""
    comp = set()
    expanded = set()
    queue = deque()
    for s in seeds:
        comp.add(s)
        expanded.add(s)
        queue.append(s)
    while queue:
        r, c = queue.popleft()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w):
                    continue
                comp.add((rr, cc))
                if (rr, cc) not in expanded and passes(rr, cc):
                    expanded.add((rr, cc))
                    queue.append((rr, cc))
    return comp


def _crossings(x0, y0, x1, y1):
    """Exact parameters in (0, 1) where the segment meets integer grid lines."""
    x0, y0, x1, y1 = (Fraction(v) for v in (x0, y0, x1, y1))
    ts = set()
    for a0, a1 in ((x0, x1), (y0, y1)):
        if a1 != a0:
            lo, hi = sorted((a0, a1))
            for k in range(math.floor(lo) + 1, math.ceil(hi)):
                ts.add((k - a0) / (a1 - a0))
    return (x0, y0, x1, y1), ts


def ray_march_cells(x0, y0, x1, y1):
    """Cells (ix, iy) a segment passes through, in cell units.

    Works in exact rational arithmetic on the float inputs: collects the
    parameters where the segment crosses integer grid lines, then samples the
    cell at the midpoint of every sub-interval.  Cells are half-open,
    [i, i+1) x [j, j+1).
    """
    (x0, y0, x1, y1), ts = _crossings(x0, y0, x1, y1)
    ts = sorted(ts | {Fraction(0), Fraction(1)})
    out = []
    for ta, tb in zip(ts, ts[1:]):
        f = (ta + tb) / 2
        cell = (math.floor(x0 + f * (x1 - x0)), math.floor(y0 + f * (y1 - y0)))
        if not out or out[-1] != cell:
            out.append(cell)
    # the half-open cell holding an endpoint on a grid line owns that endpoint
    start = (math.floor(x0), math.floor(y0))
    end = (math.floor(x1), math.floor(y1))
    if not out or out[0] != start:
        out.insert(0, start)
    if out[-1] != end:
        out.append(end)
    return out


def near_lattice_point(x0, y0, x1, y1, eps=1e-9):
    """Whether the segment interior passes within ``eps`` of an integer
    lattice point.  Corner hits are ill-conditioned in floating point: a
    float traversal cannot tell an exact hit from a near miss."""
    (x0, y0, x1, y1), ts = _crossings(x0, y0, x1, y1)
    for t in ts:
        x = x0 + t * (x1 - x0)
        y = y0 + t * (y1 - y0)
        if abs(x - round(x)) <= eps and abs(y - round(y)) <= eps:
            return True
    return False
