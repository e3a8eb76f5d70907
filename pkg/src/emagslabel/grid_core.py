"""Grid data model: cells, slices, the ego-motion-aligned stack and the dense
working canvas used by the labeling pipeline.

Slices store their channels as a ``(H, W, 7)`` float32 array indexed
``[row, col, channel]`` where ``col`` grows east and ``row`` grows north.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

# channel order of a cell record (also the on-disk order)
M_OCC, M_FREE, V_E, V_N, VAR_VE, VAR_VN, COV_VE_VN = range(7)
N_CHANNELS = 7

DEFAULT_CELL_SIZE = 0.15
DEFAULT_DT = 0.1
UNKNOWN_PO = 0.5


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    m_occ: float = 0.0
    m_free: float = 0.0
    v_e: float = 0.0
    v_n: float = 0.0
    var_ve: float = math.nan
    var_vn: float = math.nan
    cov_ve_vn: float = 0.0

    @property
    def valid_velocity(self) -> bool:
        return _valid_variance(self.var_ve) and _valid_variance(self.var_vn)

    @classmethod
    def from_record(cls, rec) -> "Cell":
        return cls(*(float(x) for x in rec[:N_CHANNELS]))

    def to_record(self) -> np.ndarray:
        return np.array([self.m_occ, self.m_free, self.v_e, self.v_n,
                         self.var_ve, self.var_vn, self.cov_ve_vn], dtype=np.float32)


def _valid_variance(v: float) -> bool:
    return math.isfinite(v) and v > 0.0


class CellIndex(NamedTuple):
    col: int
    row: int
    t: int = 0


def occupancy_probability(cell: Cell) -> float:
    return 0.5 * cell.m_occ + 0.5 * (1.0 - cell.m_free)


def occupancy_probability_array(m_occ, m_free):
    return 0.5 * np.asarray(m_occ) + 0.5 * (1.0 - np.asarray(m_free))


def valid_velocity_array(var_ve, var_vn):
    var_ve = np.asarray(var_ve)
    var_vn = np.asarray(var_vn)
    with np.errstate(invalid="ignore"):
        return np.isfinite(var_ve) & np.isfinite(var_vn) & (var_ve > 0) & (var_vn > 0)


@dataclass
class GridSlice:
    width: int
    height: int
    cell_size: float
    origin_e: float
    origin_n: float
    timestamp: float
    cells: np.ndarray = None  # (H, W, 7) float32

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.cell_size <= 0:
            raise GridError(f"bad slice geometry {self.width}x{self.height} @ {self.cell_size}")
        if self.cells is None:
            self.cells = empty_cells(self.width, self.height)
        self.cells = np.asarray(self.cells, dtype=np.float32)
        if self.cells.shape != (self.height, self.width, N_CHANNELS):
            raise GridError(f"cells array shape {self.cells.shape} does not match "
                            f"{self.height}x{self.width}x{N_CHANNELS}")

    def cell(self, col: int, row: int) -> Cell:
        if not (0 <= col < self.width and 0 <= row < self.height):
            return Cell()
        return Cell.from_record(self.cells[row, col])

    @property
    def occupancy(self) -> np.ndarray:
        return occupancy_probability_array(self.cells[..., M_OCC], self.cells[..., M_FREE])

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin_e + 0.5 * self.width * self.cell_size,
                self.origin_n + 0.5 * self.height * self.cell_size)


def empty_cells(width: int, height: int) -> np.ndarray:
    arr = np.zeros((height, width, N_CHANNELS), dtype=np.float32)
    arr[..., VAR_VE] = np.nan
    arr[..., VAR_VN] = np.nan
    return arr


def world_to_index(sl: GridSlice, e: float, n: float) -> CellIndex | None:
    """Cell containing world point ``(e, n)``; ``None`` when outside the slice."""
    col = math.floor((e - sl.origin_e) / sl.cell_size)
    row = math.floor((n - sl.origin_n) / sl.cell_size)
    if 0 <= col < sl.width and 0 <= row < sl.height:
        return CellIndex(col, row)
    return None


def index_to_world(sl: GridSlice, col: int, row: int) -> tuple[float, float]:
    """World coordinates of the center of cell ``(col, row)``."""
    return (sl.origin_e + (col + 0.5) * sl.cell_size,
            sl.origin_n + (row + 0.5) * sl.cell_size)


@dataclass
class Emags:
    slices: list[GridSlice]
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.slices:
            raise GridError("an EMAGS needs at least one slice")
        ts = [s.timestamp for s in self.slices]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise GridError("slice timestamps must be strictly increasing")
        cs = self.slices[0].cell_size
        if any(not math.isclose(s.cell_size, cs) for s in self.slices):
            raise GridError("all slices must share one cell size")

    def __len__(self):
        return len(self.slices)

    @property
    def cell_size(self) -> float:
        return self.slices[0].cell_size

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.slices])

    def reversed(self) -> "Emags":
        """Time-reversed copy: slice order flipped, velocities negated, timestamps remapped."""
        ts = self.timestamps
        t0, t1 = ts[0], ts[-1]
        out = []
        for sl in reversed(self.slices):
            cells = sl.cells.copy()
            cells[..., V_E] *= -1
            cells[..., V_N] *= -1
            out.append(GridSlice(sl.width, sl.height, sl.cell_size, sl.origin_e, sl.origin_n,
                                 t0 + (t1 - sl.timestamp), cells))
        return Emags(out, self.dt)


@dataclass
class Snapshot:
    """A raw DOGMa snapshot in the ego frame plus the ego pose at its timestamp.

    ``grid.origin_e/origin_n`` are relative to the ego position.
    """
    grid: GridSlice
    ego_e: float
    ego_n: float


def align_snapshots(snapshots: Sequence[Snapshot], dt: float = DEFAULT_DT) -> Emags:
    """Express every snapshot in the world frame of the first one.

    Translation only: each world origin is snapped to the cell lattice of the
    first slice so static content lands on identical cells.
    """
    if not snapshots:
        raise GridError("no snapshots to align")
    ts = [s.grid.timestamp for s in snapshots]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise GridError("snapshot timestamps must be strictly increasing")
    cs = snapshots[0].grid.cell_size
    ref_e = snapshots[0].ego_e + snapshots[0].grid.origin_e
    ref_n = snapshots[0].ego_n + snapshots[0].grid.origin_n
    out = []
    for snap in snapshots:
        g = snap.grid
        oe = ref_e + round((snap.ego_e + g.origin_e - ref_e) / cs) * cs
        on = ref_n + round((snap.ego_n + g.origin_n - ref_n) / cs) * cs
        out.append(GridSlice(g.width, g.height, g.cell_size, oe, on, g.timestamp, g.cells))
    return Emags(out, dt)


@dataclass
class Canvas:
    """Dense float64 volume over the union extent of all slices.

    Everything the pipeline touches after loading lives here.  Cells a slice
    does not cover are unknown: ``po = 0.5`` and invalid velocity.
    """
    cell_size: float
    origin_e: float
    origin_n: float
    timestamps: np.ndarray
    po: np.ndarray          # (T, H, W)
    ve: np.ndarray
    vn: np.ndarray
    var_ve: np.ndarray
    var_vn: np.ndarray
    valid: np.ndarray       # bool (T, H, W)
    in_extent: np.ndarray   # bool (T, H, W)
    ego: np.ndarray         # (T, 2) world position of the ego per slice
    dt: float = DEFAULT_DT
    speed: np.ndarray = field(init=False)
    theta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.speed = np.hypot(self.ve, self.vn)
        self.theta = np.arctan2(self.vn, self.ve)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.po.shape

    @property
    def n_slices(self) -> int:
        return self.po.shape[0]

    def centers(self, rows, cols) -> tuple[np.ndarray, np.ndarray]:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        return (self.origin_e + (cols + 0.5) * self.cell_size,
                self.origin_n + (rows + 0.5) * self.cell_size)

    def to_index(self, e, n) -> tuple[np.ndarray, np.ndarray]:
        """(rows, cols) of the cells containing world points; may be out of range."""
        cols = np.floor((np.asarray(e) - self.origin_e) / self.cell_size).astype(np.int64)
        rows = np.floor((np.asarray(n) - self.origin_n) / self.cell_size).astype(np.int64)
        return rows, cols

    def inside(self, rows, cols) -> np.ndarray:
        _, h, w = self.po.shape
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        return (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)

    def slice_dt(self, t_from: int, t_to: int) -> float:
        return float(abs(self.timestamps[t_to] - self.timestamps[t_from]))


def build_canvas(emags: Emags, ego_positions: np.ndarray | None = None) -> Canvas:
    """Resample the aligned stack onto one lattice covering every slice.

    The ego is assumed at the slice center unless positions are supplied
    (DOGMa grids are ego-centered).
    """
    cs = emags.cell_size
    e0 = min(s.origin_e for s in emags.slices)
    n0 = min(s.origin_n for s in emags.slices)
    offs = []
    w_tot = h_tot = 0
    for s in emags.slices:
        dc = int(round((s.origin_e - e0) / cs))
        dr = int(round((s.origin_n - n0) / cs))
        offs.append((dr, dc))
        w_tot = max(w_tot, dc + s.width)
        h_tot = max(h_tot, dr + s.height)
    t = len(emags.slices)
    raw = np.zeros((t, h_tot, w_tot, N_CHANNELS), dtype=np.float64)
    raw[..., VAR_VE] = np.nan
    raw[..., VAR_VN] = np.nan
    in_extent = np.zeros((t, h_tot, w_tot), dtype=bool)
    for k, (s, (dr, dc)) in enumerate(zip(emags.slices, offs)):
        raw[k, dr:dr + s.height, dc:dc + s.width] = s.cells
        in_extent[k, dr:dr + s.height, dc:dc + s.width] = True
    po = occupancy_probability_array(raw[..., M_OCC], raw[..., M_FREE])
    po[~in_extent] = UNKNOWN_PO
    valid = valid_velocity_array(raw[..., VAR_VE], raw[..., VAR_VN]) & in_extent
    ve = np.where(valid, raw[..., V_E], 0.0)
    vn = np.where(valid, raw[..., V_N], 0.0)
    if ego_positions is None:
        ego_positions = np.array([s.center for s in emags.slices])
    return Canvas(cs, e0, n0, emags.timestamps, po, ve, vn,
                  raw[..., VAR_VE], raw[..., VAR_VN], valid, in_extent,
                  np.asarray(ego_positions, dtype=float), emags.dt)
