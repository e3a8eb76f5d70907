"""Compare label records against synthetic ground truth."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import OrientedRect, rect_iou


@dataclass
class ActorMetrics:
    actor: str
    frames: int
    matched: int
    mean_iou: float
    dim_error: float           # mean |width error| + |length error| over matched frames (m)
    id_switches: int
    tracks: list = field(default_factory=list)

    @property
    def matched_fraction(self) -> float:
        return self.matched / self.frames if self.frames else 0.0

    def to_dict(self) -> dict:
        return {"actor": self.actor, "frames": self.frames, "matched": self.matched,
                "matched_fraction": self.matched_fraction, "mean_iou": self.mean_iou,
                "dim_error": self.dim_error, "id_switches": self.id_switches,
                "tracks": self.tracks}


def _truth_rect(b) -> OrientedRect:
    return OrientedRect(b.center[0], b.center[1], b.orientation, b.length, b.width)


def _label_rect(r) -> OrientedRect:
    return OrientedRect(r.center[0], r.center[1], r.orientation, r.length, r.width)


def match_frame(truth, labels, min_iou: float = 0.3) -> list[tuple[int, int, float]]:
    """Greedy assignment by descending IoU; returns (truth idx, label idx, iou)."""
    pairs = []
    for i, b in enumerate(truth):
        tb = _truth_rect(b)
        for j, r in enumerate(labels):
            iou = rect_iou(tb, _label_rect(r))
            if iou > min_iou:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_t, used_l, out = set(), set(), []
    for iou, i, j in pairs:
        if i in used_t or j in used_l:
            continue
        used_t.add(i)
        used_l.add(j)
        out.append((i, j, iou))
    return out


def evaluate(labels, truth, min_iou: float = 0.3, min_visibility: float = 0.0) -> dict:
    """Per-actor metrics over ground-truth frames that are in bounds and have
    visibility above ``min_visibility``."""
    by_t_labels = defaultdict(list)
    for r in labels:
        by_t_labels[r.slice].append(r)
    by_t_truth = defaultdict(list)
    for b in truth.boxes:
        if b.in_bounds and b.visibility > min_visibility:
            by_t_truth[b.t].append(b)
    stats = defaultdict(lambda: {"frames": 0, "ious": [], "dims": [], "ids": []})
    for t in sorted(by_t_truth):
        tr = by_t_truth[t]
        lb = by_t_labels.get(t, [])
        for b in tr:
            stats[b.actor]["frames"] += 1
        for i, j, iou in match_frame(tr, lb, min_iou):
            s = stats[tr[i].actor]
            s["ious"].append(iou)
            s["dims"].append(abs(lb[j].width - tr[i].width) + abs(lb[j].length - tr[i].length))
            s["ids"].append(lb[j].track)
    actors = []
    for name in sorted(stats):
        s = stats[name]
        ids = s["ids"]
        switches = sum(1 for a, b in zip(ids, ids[1:]) if a != b)
        actors.append(ActorMetrics(name, s["frames"], len(s["ious"]),
                                   float(np.mean(s["ious"])) if s["ious"] else 0.0,
                                   float(np.mean(s["dims"])) if s["dims"] else float("nan"),
                                   switches, sorted(set(ids))))
    label_tracks = sorted({r.track for r in labels})
    matched_tracks = sorted({t for a in actors for t in a.tracks})
    return {"actors": [a.to_dict() for a in actors],
            "label_tracks": len(label_tracks),
            "unmatched_tracks": [t for t in label_tracks if t not in matched_tracks]}
