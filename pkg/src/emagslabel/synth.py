"""Synthetic EMAGS generator with exact ground truth.

Scripted rigid boxes move along waypoint paths and are rendered into
ego-centered DOGMa-like snapshots: occupied masses inside visible box cells,
a soft one-cell occupancy falloff without velocity, noisy velocities with
reported variances, shadows behind occluders and actors, self-occlusion seen
from the ego, and a convergence delay before newly seen cells report a valid
velocity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .geometry import segment_intersects
from .grid_core import (COV_VE_VN, M_FREE, M_OCC, N_CHANNELS, V_E, V_N, VAR_VE, VAR_VN,
                        Emags, GridSlice, Snapshot, align_snapshots)


class ScenarioError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("emagslabel.scenarios").joinpath("scenario.schema.json").read_text())


@dataclass
class Actor:
    id: str
    width: float
    length: float
    waypoints: np.ndarray
    speed: float = 0.0
    speed_profile: list | None = None   # [[slice, speed], ...], piecewise linear
    start_slice: int = 0
    end_slice: int | None = None
    heading_deg: float = 0.0            # used when the path is a single point

    def _speed_at(self, k: float) -> float:
        if not self.speed_profile:
            return self.speed
        pts = np.asarray(self.speed_profile, dtype=float)
        return float(np.interp(k, pts[:, 0], pts[:, 1]))

    def states(self, duration: int, dt: float) -> list:
        """(center_e, center_n, heading, v_e, v_n) per slice, or None when inactive."""
        wp = self.waypoints
        seg = np.diff(wp, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1]) if len(wp) > 1 else np.zeros(0)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        end = duration - 1 if self.end_slice is None else self.end_slice
        out = []
        s = 0.0
        for k in range(duration):
            if k < self.start_slice or k > end:
                out.append(None)
                continue
            if k > self.start_slice:
                s += 0.5 * (self._speed_at(k - 1) + self._speed_at(k)) * dt
            v = self._speed_at(k)
            if len(wp) == 1:
                h = math.radians(self.heading_deg)
                out.append((wp[0, 0], wp[0, 1], h, 0.0, 0.0))
                continue
            if s >= cum[-1]:
                i = len(seg) - 1
                pos = wp[-1]
                v = 0.0
            else:
                i = int(np.searchsorted(cum, s, side="right") - 1)
                f = (s - cum[i]) / seg_len[i]
                pos = wp[i] + f * seg[i]
            h = math.atan2(seg[i, 1], seg[i, 0])
            out.append((float(pos[0]), float(pos[1]), h, v * math.cos(h), v * math.sin(h)))
        return out


@dataclass
class Scenario:
    name: str
    duration: int
    width: int
    height: int
    cell_size: float = 0.15
    dt: float = 0.1
    ego_waypoints: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    ego_speed: float = 0.0
    actors: list = field(default_factory=list)
    walls: list = field(default_factory=list)         # dicts: points, false_velocity
    occluders: list = field(default_factory=list)     # [(a, b), ...]
    flicker: float = 0.0
    velocity_std: float = 0.15
    variance_range: tuple | None = None   # default: 0.8..1.2 x velocity_std^2
    convergence_delay: int = 0
    max_range: float = 1e9
    full_view_range: float = 1e9
    surface_depth: float = 1e9
    ramp: float = 0.0
    ramp_gain: float = 2.0
    max_incidence_deg: float = 90.0
    buildings: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        try:
            jsonschema.validate(doc, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ScenarioError(f"scenario invalid at {where}: {exc.message}") from None
        grid = doc["grid"]
        ego = doc.get("ego", {})
        noise = doc.get("noise", {})
        sensor = doc.get("sensor", {})
        cs = float(grid.get("cell_size", 0.15))
        actors = []
        for a in doc.get("actors", []):
            act = Actor(str(a["id"]), float(a["width"]), float(a["length"]),
                        np.asarray(a["waypoints"], dtype=float), float(a.get("speed", 0.0)),
                        a.get("speed_profile"), int(a.get("start_slice", 0)),
                        a.get("end_slice"), float(a.get("heading_deg", 0.0)))
            if act.width < cs or act.length < cs:
                raise ScenarioError(f"actor {act.id}: box must span at least one cell")
            actors.append(act)
        ids = [a.id for a in actors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("actor ids must be unique")
        walls = []
        for w in doc.get("walls", []):
            if isinstance(w, dict):
                walls.append({"points": np.asarray(w["points"], float),
                              "false_velocity": float(w.get("false_velocity", 0.0))})
            else:
                walls.append({"points": np.asarray(w, float), "false_velocity": 0.0})
        return cls(
            name=doc.get("name", "scenario"),
            duration=int(doc["duration"]),
            width=int(grid["width"]), height=int(grid["height"]), cell_size=cs,
            dt=float(grid.get("dt", 0.1)),
            ego_waypoints=np.asarray(ego.get("waypoints", [[0.0, 0.0]]), dtype=float),
            ego_speed=float(ego.get("speed", 0.0)),
            actors=actors, walls=walls,
            occluders=[(np.asarray(o[0], float), np.asarray(o[1], float)) for o in doc.get("occluders", [])],
            flicker=float(noise.get("flicker", 0.0)),
            velocity_std=float(noise.get("velocity_std", 0.15)),
            variance_range=tuple(noise["variance_range"]) if "variance_range" in noise else None,
            convergence_delay=int(doc.get("convergence_delay", 0)),
            max_range=float(sensor.get("max_range", 1e9)),
            full_view_range=float(sensor.get("full_view_range", 1e9)),
            surface_depth=float(sensor.get("surface_depth", 1e9)),
            ramp=float(sensor.get("ramp", 0.0)),
            ramp_gain=float(sensor.get("ramp_gain", 2.0)),
            max_incidence_deg=float(sensor.get("max_incidence_deg", 90.0)),
            buildings=[[tuple(v) for v in b] for b in doc.get("buildings", [])],
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}:{exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def ego_path(self) -> np.ndarray:
        ego = Actor("ego", 1.0, 1.0, self.ego_waypoints, self.ego_speed)
        return np.array([s[:2] for s in ego.states(self.duration, self.dt)])


def builtin_scenarios() -> list[str]:
    files = resources.files("emagslabel.scenarios")
    return sorted(p.name[:-5] for p in files.iterdir()
                  if p.name.endswith(".json") and p.name != "scenario.schema.json")


def builtin_scenario_path(name: str):
    return resources.files("emagslabel.scenarios").joinpath(f"{name}.json")


def load_builtin(name: str) -> Scenario:
    return Scenario.from_dict(json.loads(builtin_scenario_path(name).read_text()))


@dataclass
class TruthBox:
    actor: str
    t: int
    timestamp: float
    center: tuple[float, float]
    orientation: float
    width: float
    length: float
    visibility: float
    in_bounds: bool

    def to_dict(self) -> dict:
        return {"actor": self.actor, "slice": self.t, "timestamp": self.timestamp,
                "center": list(self.center), "orientation": self.orientation,
                "width": self.width, "length": self.length,
                "visibility": self.visibility, "in_bounds": self.in_bounds}

    @classmethod
    def from_dict(cls, d: dict) -> "TruthBox":
        return cls(d["actor"], int(d["slice"]), float(d["timestamp"]), tuple(d["center"]),
                   float(d["orientation"]), float(d["width"]), float(d["length"]),
                   float(d["visibility"]), bool(d["in_bounds"]))


@dataclass
class GroundTruth:
    boxes: list[TruthBox]

    def at(self, t: int) -> list[TruthBox]:
        return [b for b in self.boxes if b.t == t]

    def actor(self, name: str) -> list[TruthBox]:
        return [b for b in self.boxes if b.actor == name]

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for b in self.boxes:
                fh.write(json.dumps(b.to_dict()) + "\n")

    @classmethod
    def read(cls, path) -> "GroundTruth":
        with open(path) as fh:
            return cls([TruthBox.from_dict(json.loads(line)) for line in fh if line.strip()])


def _wall_cells(points: np.ndarray, cs: float) -> np.ndarray:
    """World lattice cells (col, row) along a polyline, lattice anchored at 0."""
    cells = []
    for a, b in zip(points[:-1], points[1:]):
        n = max(2, int(math.ceil(np.hypot(*(b - a)) / (0.25 * cs))) + 1)
        pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
        cells.append(np.floor(pts / cs).astype(np.int64))
    if not cells:
        return np.zeros((0, 2), np.int64)
    return np.unique(np.concatenate(cells), axis=0)


def _box_entry(ego, e, n, box) -> tuple[np.ndarray, np.ndarray]:
    """In-box path length before each point and the cosine of incidence on the
    entry face, for sight lines ego -> (e, n) into an oriented box."""
    ce, cn, h, L, W = box
    u = np.array([math.cos(h), math.sin(h)])
    v = np.array([-u[1], u[0]])
    oa = (ego[0] - ce) * u[0] + (ego[1] - cn) * u[1]
    ob = (ego[0] - ce) * v[0] + (ego[1] - cn) * v[1]
    pa = (e - ce) * u[0] + (n - cn) * u[1]
    pb = (e - ce) * v[0] + (n - cn) * v[1]
    da, db = pa - oa, pb - ob
    dist = np.hypot(da, db)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(np.abs(da) > 1e-12, (-np.sign(da) * 0.5 * L - oa) / da, -np.inf)
        tb = np.where(np.abs(db) > 1e-12, (-np.sign(db) * 0.5 * W - ob) / db, -np.inf)
    t_in = np.maximum(ta, tb)
    t_in = np.clip(t_in, 0.0, 1.0)
    depth = (1.0 - t_in) * dist
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_inc = np.where(ta >= tb, np.abs(da), np.abs(db)) / np.maximum(dist, 1e-12)
    return depth, cos_inc


def generate(scenario: Scenario, rng_seed: int = 0) -> tuple[Emags, GroundTruth]:
    sc = scenario
    cs = sc.cell_size
    W, H = sc.width, sc.height
    ego_path = sc.ego_path()
    actor_states = [a.states(sc.duration, sc.dt) for a in sc.actors]
    first_seen = [dict() for _ in sc.actors]
    wall_cells = [(_wall_cells(w["points"], cs), w["false_velocity"]) for w in sc.walls]
    cos_max = math.cos(math.radians(sc.max_incidence_deg))
    var_lo, var_hi = sc.variance_range or (0.8 * sc.velocity_std ** 2, 1.2 * sc.velocity_std ** 2)
    var_lo = max(var_lo, 1e-6)
    var_hi = max(var_hi, var_lo)

    # slice origins: ego-centered, snapped to the lattice anchored at world 0
    origins = []
    for ego in ego_path:
        oe = round((ego[0] - 0.5 * W * cs) / cs) * cs
        on = round((ego[1] - 0.5 * H * cs) / cs) * cs
        origins.append((oe, on))

    snapshots = []
    truth = []
    cols = np.arange(W)
    rows = np.arange(H)
    for k in range(sc.duration):
        rng = np.random.default_rng([rng_seed, k])
        oe, on = origins[k]
        ego = (oe + 0.5 * W * cs, on + 0.5 * H * cs)
        E = oe + (cols[None, :] + 0.5) * cs + np.zeros((H, 1))
        N = on + (rows[:, None] + 0.5) * cs + np.zeros((1, W))
        R = np.hypot(E - ego[0], N - ego[1])
        in_range = R <= sc.max_range

        cells = np.zeros((H, W, N_CHANNELS), dtype=np.float64)
        cells[..., VAR_VE] = np.nan
        cells[..., VAR_VN] = np.nan
        cells[..., M_FREE] = np.where(in_range, rng.uniform(0.8, 0.9, (H, W)), 0.0)

        blocked = np.zeros((H, W), dtype=bool)
        for a, b in sc.occluders:
            blocked |= segment_intersects(ego[0], ego[1], E, N, a, b)

        boxes = []
        inside = []
        shadow = []
        for act, states in zip(sc.actors, actor_states):
            st = states[k]
            if st is None:
                boxes.append(None)
                inside.append(None)
                shadow.append(None)
                continue
            ce, cn, h, ve, vn = st
            box = (ce, cn, h, act.length, act.width)
            u = (math.cos(h), math.sin(h))
            a_ = (E - ce) * u[0] + (N - cn) * u[1]
            b_ = -(E - ce) * u[1] + (N - cn) * u[0]
            ins = (np.abs(a_) <= 0.5 * act.length) & (np.abs(b_) <= 0.5 * act.width)
            corners = [(ce + sa * 0.5 * act.length * u[0] - sb * 0.5 * act.width * u[1],
                        cn + sa * 0.5 * act.length * u[1] + sb * 0.5 * act.width * u[0])
                       for sa, sb in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
            sh = np.zeros((H, W), dtype=bool)
            for i in range(4):
                sh |= segment_intersects(ego[0], ego[1], E, N, corners[i], corners[(i + 1) % 4])
            boxes.append(box)
            inside.append(ins)
            shadow.append(sh & ~ins)

        # static walls
        wall_mask = np.zeros((H, W), dtype=bool)
        for wc, false_vel in wall_cells:
            if len(wc) == 0:
                continue
            c = wc[:, 0] - int(round(oe / cs))
            r = wc[:, 1] - int(round(on / cs))
            ok = (c >= 0) & (c < W) & (r >= 0) & (r < H)
            c, r = c[ok], r[ok]
            vis = in_range[r, c] & ~blocked[r, c]
            for sh in shadow:
                if sh is not None:
                    vis &= ~sh[r, c]
            c, r = c[vis], r[vis]
            wall_mask[r, c] = True
            n = len(c)
            cells[r, c, M_OCC] = rng.uniform(0.85, 0.95, n)
            cells[r, c, M_FREE] = rng.uniform(0.0, 0.05, n)
            cells[r, c, V_E] = 0.0
            cells[r, c, V_N] = 0.0
            cells[r, c, VAR_VE] = rng.uniform(var_lo, var_hi, n)
            cells[r, c, VAR_VN] = rng.uniform(var_lo, var_hi, n)
            if false_vel > 0:
                fake = rng.random(n) < false_vel
                ang = rng.uniform(-math.pi, math.pi, n)
                mag = rng.uniform(0.5, 2.0, n)
                cells[r[fake], c[fake], V_E] = (mag * np.cos(ang))[fake]
                cells[r[fake], c[fake], V_N] = (mag * np.sin(ang))[fake]

        others_shadow = np.zeros((H, W), dtype=bool)
        for sh in shadow:
            if sh is not None:
                others_shadow |= sh

        body_any = np.zeros((H, W), dtype=bool)
        for ins in inside:
            if ins is not None:
                body_any |= ins

        # shadows: free space / walls behind anything opaque become unknown
        hidden = (blocked | others_shadow) & ~body_any
        cells[hidden, M_OCC] = 0.0
        cells[hidden, M_FREE] = 0.0
        cells[hidden, V_E:V_N + 1] = 0.0
        cells[hidden, VAR_VE] = np.nan
        cells[hidden, VAR_VN] = np.nan

        for j, (act, states) in enumerate(zip(sc.actors, actor_states)):
            st = states[k]
            if st is None:
                continue
            ce, cn, h, ve, vn = st
            ins = inside[j]
            box = boxes[j]
            rr, cc = np.nonzero(ins)
            total = len(rr)
            e, n = E[rr, cc], N[rr, cc]
            vis = in_range[rr, cc] & ~blocked[rr, cc]
            for i, sh in enumerate(shadow):
                if sh is not None and i != j:
                    vis &= ~sh[rr, cc]
            # self-occlusion: beyond full_view_range (actor center) only a
            # surface layer is seen; its depth grows over the ramp up to
            # (1 + ramp_gain) * surface_depth before the box turns fully visible
            r_center = math.hypot(ce - ego[0], cn - ego[1])
            if r_center > sc.full_view_range:
                depth, cos_inc = _box_entry(ego, e, n, box)
                f = 0.0
                if sc.ramp > 0:
                    f = min(1.0, max(0.0, 1.0 - (r_center - sc.full_view_range) / sc.ramp))
                lim = sc.surface_depth * (1.0 + sc.ramp_gain * f)
                vis &= (depth <= lim) & (cos_inc >= cos_max - 1e-12)
            # hidden body cells are unknown
            hr, hc = rr[~vis], cc[~vis]
            cells[hr, hc, M_OCC] = 0.0
            cells[hr, hc, M_FREE] = 0.0
            cells[hr, hc, V_E:V_N + 1] = 0.0
            cells[hr, hc, VAR_VE] = np.nan
            cells[hr, hc, VAR_VN] = np.nan

            vr, vc = rr[vis], cc[vis]
            nv = len(vr)
            cells[vr, vc, M_OCC] = rng.uniform(0.85, 0.95, nv)
            cells[vr, vc, M_FREE] = rng.uniform(0.0, 0.05, nv)
            cells[vr, vc, V_E] = ve + rng.normal(0.0, sc.velocity_std, nv)
            cells[vr, vc, V_N] = vn + rng.normal(0.0, sc.velocity_std, nv)
            cells[vr, vc, VAR_VE] = rng.uniform(var_lo, var_hi, nv)
            cells[vr, vc, VAR_VN] = rng.uniform(var_lo, var_hi, nv)
            cells[vr, vc, COV_VE_VN] = 0.0
            if sc.convergence_delay > 0 and nv:
                u = (math.cos(h), math.sin(h))
                ba = np.rint(((e[vis] - ce) * u[0] + (n[vis] - cn) * u[1]) / cs).astype(int)
                bb = np.rint((-(e[vis] - ce) * u[1] + (n[vis] - cn) * u[0]) / cs).astype(int)
                seen = first_seen[j]
                young = np.zeros(nv, dtype=bool)
                for i, key in enumerate(zip(ba.tolist(), bb.tolist())):
                    k0 = seen.setdefault(key, k)
                    young[i] = k - k0 < sc.convergence_delay
                yr, yc = vr[young], vc[young]
                cells[yr, yc, V_E:V_N + 1] = 0.0
                cells[yr, yc, VAR_VE] = np.nan
                cells[yr, yc, VAR_VN] = np.nan

            # soft falloff ring on the visible side
            u = (math.cos(h), math.sin(h))
            a_ = (E - ce) * u[0] + (N - cn) * u[1]
            b_ = -(E - ce) * u[1] + (N - cn) * u[0]
            ring = ((np.abs(a_) <= 0.5 * act.length + cs) & (np.abs(b_) <= 0.5 * act.width + cs)
                    & ~body_any & ~wall_mask & in_range & ~blocked & ~shadow[j] & ~others_shadow)
            gr, gc = np.nonzero(ring)
            ng = len(gr)
            cells[gr, gc, M_OCC] = rng.uniform(0.25, 0.35, ng)
            cells[gr, gc, M_FREE] = rng.uniform(0.3, 0.4, ng)
            # too little particle mass at the edge for a velocity estimate
            cells[gr, gc, V_E:V_N + 1] = 0.0
            cells[gr, gc, VAR_VE] = np.nan
            cells[gr, gc, VAR_VN] = np.nan

            in_b = (oe <= ce < oe + W * cs) and (on <= cn < on + H * cs)
            truth.append(TruthBox(act.id, k, k * sc.dt, (float(ce), float(cn)), float(h),
                                  act.width, act.length,
                                  float(nv / total) if total else 0.0, bool(in_b)))

        if sc.flicker > 0:
            flip = (rng.random((H, W)) < sc.flicker) & in_range
            fr, fc = np.nonzero(flip)
            occ = cells[fr, fc, M_OCC] > 0.5
            cells[fr, fc, M_OCC] = np.where(occ, 0.0, 0.9)
            cells[fr, fc, M_FREE] = np.where(occ, 0.85, 0.0)
            cells[fr, fc, V_E:V_N + 1] = 0.0
            cells[fr, fc, VAR_VE] = np.nan
            cells[fr, fc, VAR_VN] = np.nan

        grid = GridSlice(W, H, cs, oe - ego_path[k][0], on - ego_path[k][1], k * sc.dt,
                         cells.astype(np.float32))
        snapshots.append(Snapshot(grid, float(ego_path[k][0]), float(ego_path[k][1])))

    emags = align_snapshots(snapshots, sc.dt)
    # undo the float round-trip of origin - ego + ego
    for sl, (oe, on) in zip(emags.slices, origins):
        sl.origin_e, sl.origin_n = oe, on
    return emags, GroundTruth(truth)


def buildings_geojson(scenario: Scenario) -> dict:
    feats = []
    for k, ring in enumerate(scenario.buildings):
        coords = [list(v) for v in ring]
        if coords[0] != coords[-1]:
            coords.append(coords[0])
        feats.append({"type": "Feature", "properties": {"name": f"building-{k}"},
                      "geometry": {"type": "Polygon", "coordinates": [coords]}})
    return {"type": "FeatureCollection", "features": feats}
