"""Pipeline configuration.  Every threshold the labeling pipeline uses lives here;
a JSON config file may override any subset of the keys."""

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # preprocessing
    sigma_spatial: float = 2.0          # cells
    sigma_temporal: float = 1.0         # slices
    min_gradient: float = 0.02          # P_O per cell; floor under the Otsu split
    traversal_min_range: float = 0.3    # max - min of a cell's temporal profile
    traversal_min_peak: float = 0.6     # raw P_O a traversed cell must show
    min_cluster_cells: int = 4

    # velocity profile / gating
    band: float = 2.0

    # extraction
    init_max_variance: float = 1.0      # m^2/s^2
    occupancy_floor: float = 0.55
    occupancy_std_floor: float = 0.05
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    k_pred: float = 2.0
    seed_area: float = 0.5              # m^2 per search seed
    standing_speed: float = 0.5         # m/s; below it orientation is frozen
    dimension_percentile: float = 90.0
    occlusion_tol: float = 0.5          # P_O sum treated as equal when ranking corners
    outlier_po_fraction: float = 0.9

    # tracing
    max_coast: int = 3
    area_jump: float = 3.0
    orientation_jump_deg: float = 60.0
    orientation_jump_min_speed: float = 1.0
    duplicate_overlap: float = 0.5

    # post processing
    max_length: float = 20.0
    max_width: float = 4.0
    min_length: float = 0.2
    max_aspect: float = 8.0
    building_fraction: float = 0.5
    static_path: float = 1.0
    static_speed: float = 0.3
    max_accel: float = 5.0
    accel_fraction: float = 0.2
    accel_baseline: float = 0.5         # seconds between samples of the second difference
    min_track_poses: int = 3
    smoothing_window: int = 0           # 0 disables the optional smoothing stage

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for key, value in data.items():
            default = known[key].default
            if key == "loss_weights":
                if len(value) != 4:
                    raise ConfigError("loss_weights needs four entries")
                kw[key] = tuple(float(v) for v in value)
            elif isinstance(default, bool):
                kw[key] = bool(value)
            elif isinstance(default, int):
                kw[key] = int(value)
            else:
                kw[key] = float(value)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
