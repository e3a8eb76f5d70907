"""Binary EMAGS container.

Layout (all little-endian)::

    b"EMAG" | version u16 | W u32 | H u32 | cell_size f64 | n_slices u32 | dt f64
    per slice: timestamp f64 | origin_e f64 | origin_n f64 | W*H records of 7 f32

Records run row by row (north index outer, east index inner) in the channel
order m_occ, m_free, v_e, v_n, var_ve, var_vn, cov_ve_vn.  Invalid velocity
is stored as NaN variances.
"""

import struct

import numpy as np

from .grid_core import N_CHANNELS, Emags, GridError, GridSlice

MAGIC = b"EMAG"
VERSION = 1
_HEADER = struct.Struct("<4sHIIdId")
_SLICE = struct.Struct("<ddd")


class ContainerError(GridError):
    pass


def write_emags(path, emags: Emags) -> None:
    first = emags.slices[0]
    w, h = first.width, first.height
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, w, h, first.cell_size, len(emags.slices), emags.dt))
        for sl in emags.slices:
            if (sl.width, sl.height) != (w, h):
                raise ContainerError("container slices must share W and H")
            fh.write(_SLICE.pack(sl.timestamp, sl.origin_e, sl.origin_n))
            fh.write(np.ascontiguousarray(sl.cells, dtype="<f4").tobytes())


def read_emags(path) -> Emags:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, w, h, cs, n, dt = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    rec_bytes = w * h * N_CHANNELS * 4
    expected = _HEADER.size + n * (_SLICE.size + rec_bytes)
    if len(buf) != expected:
        raise ContainerError(f"{path}: size {len(buf)} does not match header ({expected})")
    off = _HEADER.size
    slices = []
    for _ in range(n):
        ts, oe, on = _SLICE.unpack_from(buf, off)
        off += _SLICE.size
        cells = np.frombuffer(buf, dtype="<f4", count=w * h * N_CHANNELS, offset=off)
        off += rec_bytes
        slices.append(GridSlice(w, h, cs, oe, on, ts, cells.reshape(h, w, N_CHANNELS).copy()))
    try:
        return Emags(slices, dt)
    except GridError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
