"""Offline auto-labeling of moving objects in ego-motion-aligned DOGMa grid stacks."""

from .config import Config
from .grid_core import Canvas, Emags, GridSlice, Snapshot, align_snapshots, build_canvas
from .labels import LabelRecord, label_emags, read_labels, write_labels

__all__ = ["Config", "Canvas", "Emags", "GridSlice", "Snapshot", "align_snapshots",
           "build_canvas", "LabelRecord", "label_emags", "read_labels", "write_labels"]
