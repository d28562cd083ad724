"""Bundled formation scenarios: the lane-change presets and the
uncertainty settings used for the quantitative comparison runs."""

from __future__ import annotations

from pathlib import Path

from .scenario import (
    LaneChangeSpec,
    RoadGeometry,
    ScenarioConfig,
    VehicleParams,
    VehicleSpec,
    Weights,
    save_scenario,
)
from .uncertainty import UncertaintySettings

FORMATION_SPEED = 15.0
GAP_FACTOR = 2.0
START_LANES = (1, 2, 1, 2, 1)  # follower start lanes, cycling


def comparison_uncertainty(sigma: float = 0.1, confidence: float = 0.7,
                           rain: float = 0.0) -> UncertaintySettings:
    """Perception/communication settings of the quantitative comparison:
    unit box deviations on position and speed, half-radian heading
    deviation, fixed detector confidence, lossy V2V."""
    return UncertaintySettings(
        perception_ranges=((-1.0, 1.0), (-1.0, 1.0), (-0.5, 0.5), (-1.0, 1.0)),
        confidence_model="fixed",
        confidence=confidence,
        sigma=sigma,
        rain=rain,
        alpha_base=0.1,
        alpha_proportional=False,
        perception_hold_steps=10,
    )


def formation_scenario(
    n_av: int,
    *,
    gap_factor: float = GAP_FACTOR,
    uncertainty: UncertaintySettings | None = None,
    seed: int = 0,
    mode: str = "muacp",
    d_min: float = 1.0,
    steps: int = 100,
    mpc_steps: int = 25,
    plant_model: str = "exact",
    catch_up: float = 0.0,
) -> ScenarioConfig:
    """LV plus n_av-1 followers merging onto the LV's lane.

    The LV leads in lane 0; followers start staggered across the upper
    lanes at gap_factor vehicle lengths behind each other and file into
    lane 0 with staggered lane-change windows.  `catch_up` starts each
    follower that many meters behind its formation slot, so it has to
    accelerate into position while merging.
    """
    if not 1 <= n_av <= 6:
        raise ValueError("formation presets cover 1..6 vehicles")
    params = VehicleParams()
    road = RoadGeometry(lanes=3, lane_width=3.7)
    gap = gap_factor * params.length
    vehicles = [
        VehicleSpec(
            role="LV",
            initial=(0.0, road.lane_center(0), 0.0, FORMATION_SPEED),
            target_lane=0,
            params=params,
            lane_change=LaneChangeSpec(start=0.25, duration=1.0),
        )
    ]
    for i in range(1, n_av):
        start_lane = START_LANES[(i - 1) % len(START_LANES)]
        crossings = start_lane  # target is lane 0
        vehicles.append(
            VehicleSpec(
                role="FV",
                initial=(-i * gap - catch_up, road.lane_center(start_lane), 0.0, FORMATION_SPEED),
                target_lane=0,
                params=params,
                lane_change=LaneChangeSpec(
                    start=0.25 + 0.3 * (i - 1),
                    duration=2.2 + 1.0 * max(crossings - 1, 0),
                ),
                slot_offset=-i * gap,
            )
        )
    return ScenarioConfig(
        vehicles=tuple(vehicles),
        road=road,
        steps=steps,
        dt=0.05,
        mpc_steps=mpc_steps,
        weights=Weights(),
        d_min=d_min,
        uncertainty=uncertainty or UncertaintySettings(),
        seed=seed,
        mode=mode,
        plant_model=plant_model,
    )


def comparison_scenario(n_av: int, mode: str = "muacp", seed: int = 0,
                        sigma: float = 0.1, confidence: float = 0.7,
                        rain: float = 0.0, gap_factor: float = 1.7,
                        catch_up: float = 5.0) -> ScenarioConfig:
    """Formation preset with the comparison uncertainty settings.

    The comparison formation is packed tighter than the clean presets
    and starts every follower behind its slot, so the catch-up
    acceleration drives real proximity transients where the perception
    errors threaten the safety margins.
    """
    return formation_scenario(
        n_av,
        gap_factor=gap_factor,
        uncertainty=comparison_uncertainty(sigma=sigma, confidence=confidence, rain=rain),
        seed=seed,
        mode=mode,
        catch_up=catch_up,
    )


def write_preset_files(directory: str | Path) -> list[Path]:
    """Write the bundled scenario JSON files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for n in (3, 4, 5, 6):
        path = directory / f"lane{n}.json"
        save_scenario(formation_scenario(n), path)
        written.append(path)
    for n in (3, 6):
        path = directory / f"compare{n}.json"
        save_scenario(comparison_scenario(n), path)
        written.append(path)
    return written
