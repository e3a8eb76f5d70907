"""Label records and the end-to-end labeling entry point."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

from .config import Config
from .grid_core import Emags, build_canvas
from .preprocess import preprocess
from .tracer import RunResult, run_all

log = logging.getLogger(__name__)


@dataclass
class LabelRecord:
    track: int
    slice: int
    timestamp: float
    center: tuple[float, float]
    orientation: float
    width: float
    length: float
    observed_extent: tuple[float, float]
    phase: str
    coasted: bool

    def to_json(self) -> str:
        d = asdict(self)
        d["center"] = list(self.center)
        d["observed_extent"] = list(self.observed_extent)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRecord":
        return cls(int(d["track"]), int(d["slice"]), float(d["timestamp"]),
                   tuple(float(x) for x in d["center"]), float(d["orientation"]),
                   float(d["width"]), float(d["length"]),
                   tuple(float(x) for x in d["observed_extent"]),
                   str(d["phase"]), bool(d["coasted"]))


def records_from_run(result: RunResult, timestamps) -> list[LabelRecord]:
    out = []
    for tr in result.tracks:
        for p in tr.poses:
            out.append(LabelRecord(tr.id, p.t, float(timestamps[p.t]),
                                   (float(p.center[0]), float(p.center[1])),
                                   float(p.orientation), float(p.width), float(p.length),
                                   (float(p.observed_extent[0]), float(p.observed_extent[1])),
                                   p.phase, bool(p.coasted)))
    return out


def write_labels(path, records: list[LabelRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_labels(path) -> list[LabelRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(LabelRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad label record ({exc})") from None
    return out


def label_emags(emags: Emags, config: Config | None = None, buildings=None,
                jobs: int = 1) -> tuple[RunResult, list[LabelRecord]]:
    cfg = config or Config()
    canvas = build_canvas(emags)
    pre = preprocess(canvas, cfg, jobs=jobs)
    log.info("%d init points", pre.n_init_points)
    result = run_all(canvas, pre, cfg, buildings)
    return result, records_from_run(result, emags.timestamps)
