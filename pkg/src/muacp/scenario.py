"""Scenario definitions: vehicles, road, references, weights, presets.

A scenario file is a JSON document with top-level keys `vehicles`,
`road`, `horizon`, `weights`, `uncertainty`, `seed`, `mode`.  Units are
SI throughout and angles are radians.  Everything is immutable after
loading and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .uncertainty import UncertaintySettings

MODES = ("muacp", "tcm", "sem")
PLANT_MODELS = ("exact", "small_angle")
ROLES = ("LV", "FV")


class ScenarioError(ValueError):
    """Scenario file failed parsing or invariant validation."""


def _vec(values, n, name) -> tuple:
    arr = tuple(float(v) for v in values)
    if len(arr) != n:
        raise ScenarioError(f"{name} must have {n} entries")
    return arr


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, axle spans, and operating limits of one vehicle."""

    length: float = 4.5
    width: float = 1.8
    lf: float = 1.35
    lr: float = 1.35
    z_min: tuple = (-1.0e6, -0.95, -0.5, 0.0)
    z_max: tuple = (1.0e6, 8.35, 0.5, 25.0)
    u_min: tuple = (-4.0, -0.3)
    u_max: tuple = (4.0, 0.3)
    du_min: tuple = (-0.3, -0.01)
    du_max: tuple = (0.3, 0.01)
    d_max: float = 2.0

    def __post_init__(self) -> None:
        for name in ("length", "width", "lf", "lr"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"vehicle {name} must be positive")
        object.__setattr__(self, "z_min", _vec(self.z_min, 4, "z_min"))
        object.__setattr__(self, "z_max", _vec(self.z_max, 4, "z_max"))
        object.__setattr__(self, "u_min", _vec(self.u_min, 2, "u_min"))
        object.__setattr__(self, "u_max", _vec(self.u_max, 2, "u_max"))
        object.__setattr__(self, "du_min", _vec(self.du_min, 2, "du_min"))
        object.__setattr__(self, "du_max", _vec(self.du_max, 2, "du_max"))
        if not all(a < b for a, b in zip(self.z_min, self.z_max)):
            raise ScenarioError("z_min must be componentwise below z_max")
        if not all(a < b for a, b in zip(self.u_min, self.u_max)):
            raise ScenarioError("u_min must be componentwise below u_max")
        if not all(a < 0 < b for a, b in zip(self.du_min, self.du_max)):
            raise ScenarioError("input-rate bounds must straddle zero")
        if self.d_max < 0:
            raise ScenarioError("d_max must be nonnegative")


@dataclass
class VehicleState:
    """Pose and speed of one vehicle at one time index."""

    x: float
    y: float
    phi: float
    v: float
    t: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi, self.v])

    @classmethod
    def from_array(cls, z: np.ndarray, t: int = 0) -> "VehicleState":
        return cls(x=float(z[0]), y=float(z[1]), phi=float(z[2]), v=float(z[3]), t=t)


@dataclass(frozen=True)
class LaneChangeSpec:
    """Lateral transition: start time and duration in seconds."""

    start: float = 0.25
    duration: float = 2.5

    def __post_init__(self) -> None:
        if self.start < 0 or self.duration <= 0:
            raise ScenarioError("lane change needs start >= 0 and duration > 0")


@dataclass(frozen=True)
class VehicleSpec:
    role: str
    initial: tuple  # (x, y, phi, v)
    target_lane: int
    params: VehicleParams = field(default_factory=VehicleParams)
    lane_change: LaneChangeSpec | None = None
    # formation slot relative to the LV along the road; None keeps the
    # initial longitudinal offset as the slot
    slot_offset: float | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ScenarioError(f"role must be one of {ROLES}")
        object.__setattr__(self, "initial", _vec(self.initial, 4, "initial state"))
        if not all(np.isfinite(self.initial)):
            raise ScenarioError("initial state must be finite")
        if self.slot_offset is not None:
            object.__setattr__(self, "slot_offset", float(self.slot_offset))


@dataclass(frozen=True)
class RoadGeometry:
    """Straight multi-lane road; lane i is centered at i * lane_width."""

    lanes: int = 3
    lane_width: float = 3.7
    directions: tuple = ()
    solid_lines: tuple = ()

    def __post_init__(self) -> None:
        if self.lanes < 1:
            raise ScenarioError("road needs at least one lane")
        if self.lane_width <= 0:
            raise ScenarioError("lane width must be positive")
        dirs = self.directions or tuple([1] * self.lanes)
        if len(dirs) != self.lanes or any(d not in (-1, 1) for d in dirs):
            raise ScenarioError("directions must be +-1 per lane")
        object.__setattr__(self, "directions", tuple(int(d) for d in dirs))
        solid = self.solid_lines or tuple([False] * max(self.lanes - 1, 0))
        if len(solid) != self.lanes - 1:
            raise ScenarioError("solid_lines needs one flag per internal boundary")
        object.__setattr__(self, "solid_lines", tuple(bool(s) for s in solid))

    def lane_center(self, lane: int) -> float:
        if not 0 <= lane < self.lanes:
            raise ScenarioError(f"lane {lane} outside road with {self.lanes} lanes")
        return lane * self.lane_width

    def nearest_lane(self, y: float) -> int:
        return int(np.clip(round(y / self.lane_width), 0, self.lanes - 1))

    @property
    def y_min(self) -> float:
        return -0.5 * self.lane_width

    @property
    def y_max(self) -> float:
        return (self.lanes - 0.5) * self.lane_width


@dataclass(frozen=True)
class Weights:
    """Diagonals of the tracking, input, and input-rate weight matrices."""

    state: tuple = (1.0, 100.0, 1.0, 0.1)
    input: tuple = (1.0, 1.0)
    input_rate: tuple = (1.0, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", _vec(self.state, 4, "state weights"))
        object.__setattr__(self, "input", _vec(self.input, 2, "input weights"))
        object.__setattr__(self, "input_rate", _vec(self.input_rate, 2, "input-rate weights"))
        for name in ("state", "input", "input_rate"):
            if any(w < 0 for w in getattr(self, name)):
                raise ScenarioError(f"{name} weights must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    vehicles: tuple
    road: RoadGeometry = field(default_factory=RoadGeometry)
    steps: int = 100
    dt: float = 0.05
    mpc_steps: int = 25
    weights: Weights = field(default_factory=Weights)
    d_min: float = 1.0
    uncertainty: UncertaintySettings = field(default_factory=UncertaintySettings)
    seed: int = 0
    mode: str = "muacp"
    plant_model: str = "exact"

    def __post_init__(self) -> None:
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        if self.steps < 1:
            raise ScenarioError("horizon steps must be >= 1")
        if self.dt <= 0:
            raise ScenarioError("dt must be positive")
        if self.mpc_steps < 1:
            raise ScenarioError("mpc_steps must be >= 1")
        if self.d_min < 0:
            raise ScenarioError("d_min must be nonnegative")
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}")
        if self.plant_model not in PLANT_MODELS:
            raise ScenarioError(f"plant_model must be one of {PLANT_MODELS}")
        roles = [v.role for v in self.vehicles]
        if roles.count("LV") != 1:
            raise ScenarioError("exactly one LV required")
        for v in self.vehicles:
            if self.road.lane_width <= v.params.width:
                raise ScenarioError("lane width must exceed vehicle width")
            if not 0 <= v.target_lane < self.road.lanes:
                raise ScenarioError("target lane outside road")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def lv_index(self) -> int:
        return next(i for i, v in enumerate(self.vehicles) if v.role == "LV")

    def initial_states(self) -> np.ndarray:
        return np.array([v.initial for v in self.vehicles], dtype=float)


# ---------------------------------------------------------------------------
# serialization


def _uncertainty_to_json(u: UncertaintySettings, cfg: ScenarioConfig) -> dict:
    rain = u.rain if np.isscalar(u.rain) else list(u.rain)
    return {
        "d_min": cfg.d_min,
        "perception": [list(r) for r in u.perception_ranges],
        "confidence_model": u.confidence_model,
        "confidence": u.confidence,
        "decay_range_max": u.decay_range_max,
        "sigma": u.sigma,
        "rain": rain,
        "motion_penalty": u.alpha_base,
        "motion_penalty_proportional": u.alpha_proportional,
        "epsilon": u.epsilon,
        "perception_hold_steps": u.perception_hold_steps,
        "plant_model": cfg.plant_model,
    }


def config_to_dict(cfg: ScenarioConfig) -> dict:
    vehicles = []
    for v in cfg.vehicles:
        entry = {
            "role": v.role,
            "initial": list(v.initial),
            "target_lane": v.target_lane,
            "params": asdict(v.params) | {
                k: list(getattr(v.params, k))
                for k in ("z_min", "z_max", "u_min", "u_max", "du_min", "du_max")
            },
        }
        if v.lane_change is not None:
            entry["lane_change"] = {"start": v.lane_change.start, "duration": v.lane_change.duration}
        if v.slot_offset is not None:
            entry["slot_offset"] = v.slot_offset
        vehicles.append(entry)
    return {
        "vehicles": vehicles,
        "road": {
            "lanes": cfg.road.lanes,
            "lane_width": cfg.road.lane_width,
            "directions": list(cfg.road.directions),
            "solid_lines": list(cfg.road.solid_lines),
        },
        "horizon": {"steps": cfg.steps, "dt": cfg.dt, "mpc_steps": cfg.mpc_steps},
        "weights": {
            "state": list(cfg.weights.state),
            "input": list(cfg.weights.input),
            "input_rate": list(cfg.weights.input_rate),
        },
        "uncertainty": _uncertainty_to_json(cfg.uncertainty, cfg),
        "seed": cfg.seed,
        "mode": cfg.mode,
    }


def config_from_dict(doc: dict) -> ScenarioConfig:
    try:
        raw_vehicles = doc["vehicles"]
    except (KeyError, TypeError):
        raise ScenarioError("missing top-level key 'vehicles'")
    if not raw_vehicles:
        raise ScenarioError("at least one vehicle required")
    vehicles = []
    for entry in raw_vehicles:
        params = VehicleParams(**entry.get("params", {}))
        lc = entry.get("lane_change")
        slot = entry.get("slot_offset")
        vehicles.append(
            VehicleSpec(
                role=entry.get("role", "FV"),
                initial=entry["initial"],
                target_lane=int(entry.get("target_lane", 0)),
                params=params,
                lane_change=LaneChangeSpec(**lc) if lc else None,
                slot_offset=float(slot) if slot is not None else None,
            )
        )
    road = RoadGeometry(**doc.get("road", {}))
    horizon = doc.get("horizon", {})
    unc = dict(doc.get("uncertainty", {}))
    d_min = float(unc.pop("d_min", 1.0))
    plant_model = unc.pop("plant_model", "exact")
    rain = unc.get("rain", 0.0)
    settings = UncertaintySettings(
        perception_ranges=tuple(map(tuple, unc.get("perception", DEFAULT_RANGES))),
        confidence_model=unc.get("confidence_model", "fixed"),
        confidence=float(unc.get("confidence", 1.0)),
        decay_range_max=float(unc.get("decay_range_max", 50.0)),
        sigma=float(unc.get("sigma", 1.0)),
        rain=rain if np.isscalar(rain) else tuple(float(r) for r in rain),
        alpha_base=float(unc.get("motion_penalty", 0.1)),
        alpha_proportional=bool(unc.get("motion_penalty_proportional", False)),
        epsilon=float(unc.get("epsilon", 0.05)),
        perception_hold_steps=int(unc.get("perception_hold_steps", 1)),
    )
    weights = Weights(**doc.get("weights", {}))
    return ScenarioConfig(
        vehicles=tuple(vehicles),
        road=road,
        steps=int(horizon.get("steps", 100)),
        dt=float(horizon.get("dt", 0.05)),
        mpc_steps=int(horizon.get("mpc_steps", 25)),
        weights=weights,
        d_min=d_min,
        uncertainty=settings,
        seed=int(doc.get("seed", 0)),
        mode=str(doc.get("mode", "muacp")),
        plant_model=str(plant_model),
    )


DEFAULT_RANGES = [[-1.0, 1.0], [-1.0, 1.0], [-0.5, 0.5], [-1.0, 1.0]]


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ScenarioError naming the
    violated invariant on bad input."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    return config_from_dict(doc)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# reference generation


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Per-vehicle reference states, shape (K, N+1, 4)."""

    states: np.ndarray
    dt: float

    def for_vehicle(self, k: int) -> np.ndarray:
        return self.states[k]

    def window(self, k: int, start: int, length: int) -> np.ndarray:
        return self.states[k, start : start + length]


def _smoothstep(tau: np.ndarray) -> np.ndarray:
    """Quintic 6t^5 - 15t^4 + 10t^3 on [0,1], clamped outside."""
    t = np.clip(tau, 0.0, 1.0)
    return t**3 * (6.0 * t**2 - 15.0 * t + 10.0)


def _smoothstep_rate(tau: np.ndarray) -> np.ndarray:
    t = np.clip(tau, 0.0, 1.0)
    return 30.0 * t**2 * (t - 1.0) ** 2


def generate_reference(
    cfg: ScenarioConfig, lv_path: LaneChangeSpec | None = None
) -> ReferenceTrajectory:
    """References for every vehicle over steps + mpc_steps points.

    The formation plan is owned by the LV: every vehicle runs at the LV's
    speed, keeps its initial longitudinal offset, and transitions from
    its starting lane center to its target lane center with a quintic
    lateral profile over its lane-change window.  Reference heading is
    the path tangent.
    """
    road = cfg.road
    lv = cfg.vehicles[cfg.lv_index]
    v_ref = float(lv.initial[3])
    if v_ref <= 0:
        raise ScenarioError("LV reference speed must be positive")
    N = cfg.steps + cfg.mpc_steps
    times = np.arange(N + 1) * cfg.dt
    states = np.zeros((cfg.n_vehicles, N + 1, 4))
    lv_x0 = float(lv.initial[0])
    for k, veh in enumerate(cfg.vehicles):
        start_lane = road.nearest_lane(veh.initial[1])
        y0 = road.lane_center(start_lane)
        y1 = road.lane_center(veh.target_lane)
        lc = veh.lane_change
        if veh.role == "LV" and lv_path is not None:
            lc = lv_path
        if lc is None:
            crossings = abs(veh.target_lane - start_lane)
            lc = LaneChangeSpec(start=0.25, duration=2.2 + 1.2 * max(crossings - 1, 0))
        tau = (times - lc.start) / lc.duration
        y = y0 + (y1 - y0) * _smoothstep(tau)
        dy_dt = (y1 - y0) * _smoothstep_rate(tau) / lc.duration
        phi = np.arctan2(dy_dt, v_ref)
        slot = veh.slot_offset if veh.slot_offset is not None else veh.initial[0] - lv_x0
        states[k, :, 0] = lv_x0 + slot + v_ref * times
        states[k, :, 1] = y
        states[k, :, 2] = phi
        states[k, :, 3] = v_ref
        z_min = np.asarray(veh.params.z_min)
        z_max = np.asarray(veh.params.z_max)
        if np.any(states[k] < z_min - 1e-12) or np.any(states[k] > z_max + 1e-12):
            raise ScenarioError(f"reference for vehicle {k} leaves its state bounds")
        if not (road.y_min <= y0 <= road.y_max and road.y_min <= y1 <= road.y_max):
            raise ScenarioError("reference lane center outside road bounds")
    _check_reference_spacing(cfg, states)
    return ReferenceTrajectory(states=states, dt=cfg.dt)


def _check_reference_spacing(cfg: ScenarioConfig, states: np.ndarray) -> None:
    """Vehicles sharing a target lane must keep d_min + length apart."""
    by_lane: dict[int, list[int]] = {}
    for k, veh in enumerate(cfg.vehicles):
        by_lane.setdefault(veh.target_lane, []).append(k)
    for lane, idxs in by_lane.items():
        if len(idxs) < 2:
            continue
        order = sorted(idxs, key=lambda k: -states[k, 0, 0])
        for a, b in zip(order, order[1:]):
            gap = states[a, :, 0] - states[b, :, 0]
            need = cfg.d_min + max(cfg.vehicles[a].params.length, cfg.vehicles[b].params.length)
            if np.any(gap < need - 1e-9):
                raise ScenarioError(
                    f"reference spacing between vehicles {a} and {b} drops below "
                    f"d_min + vehicle length = {need:.2f} m"
                )
