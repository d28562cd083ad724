"""Perception, communication, and motion uncertainty models.

Perception: each vehicle observes every other vehicle's state plus a
uniform deviation, together with a detector confidence score.  The score
maps to a dynamic safety margin d = d_min + (1 - rho) * d_max.

Communication: per-step directed Bernoulli connectivity; vehicles fuse
the detections they can hear by keeping the highest-confidence one
(max-score fusion), which can only shrink the margin.

Motion: rain scales the realized lateral displacement and heading change
by (1 + eta) with eta ~ U(-r/2, r/2); the resulting mismatch between the
disturbance-free propagation and the realized state feeds the planner's
motion regularizer, whose weight is the pinned penalty or one
proportional to the rain rate.

All sampling is keyed by (seed, vehicle, purpose, step), so streams are
bit-reproducible and one vehicle's draws never shift another's.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PURPOSE_PERCEPTION = 1
PURPOSE_CONNECTIVITY = 2
PURPOSE_RAIN = 3

DEFAULT_PERCEPTION_RANGES = (
    (-1.0, 1.0),
    (-1.0, 1.0),
    (-0.5, 0.5),
    (-1.0, 1.0),
)


def stream(seed: int, vehicle: int, purpose: int, step: int) -> np.random.Generator:
    """Independent generator for one (vehicle, purpose, step) tuple."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(vehicle), int(purpose), int(step))))


@dataclass
class UncertaintySettings:
    """Knobs for the three uncertainty sources.

    `sigma` is the per-step probability that a directed V2V link
    delivers; `rain` is a scalar rate or a per-step sequence in [0, 1];
    `epsilon` is the recorded chance threshold (reported in logs, not
    enforced: the margin rule is the operative mechanism).
    """

    perception_ranges: tuple = DEFAULT_PERCEPTION_RANGES
    confidence_model: str = "fixed"
    confidence: float = 1.0
    decay_range_max: float = 50.0
    sigma: float = 1.0
    rain: float | tuple = 0.0
    alpha_base: float = 0.1
    alpha_proportional: bool = False
    epsilon: float = 0.05
    perception_hold_steps: int = 1

    def __post_init__(self) -> None:
        ranges = np.asarray(self.perception_ranges, dtype=float)
        if ranges.shape != (4, 2):
            raise ValueError("perception_ranges must be 4 (lo, hi) pairs")
        if not np.all(np.isfinite(ranges)):
            raise ValueError("perception deviation intervals must be finite")
        if np.any(ranges[:, 0] > ranges[:, 1]):
            raise ValueError("perception interval lo > hi")
        self.perception_ranges = tuple(map(tuple, ranges))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0,1]")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0,1]")
        if self.confidence_model not in ("fixed", "distance_decay"):
            raise ValueError(f"unknown confidence model {self.confidence_model!r}")
        if self.alpha_base < 0:
            raise ValueError("alpha must be nonnegative")
        rain = np.atleast_1d(np.asarray(self.rain, dtype=float))
        if np.any((rain < 0) | (rain > 1)):
            raise ValueError("rain rate must lie in [0,1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0,1)")
        if self.perception_hold_steps < 1:
            raise ValueError("perception_hold_steps must be >= 1")

    def rain_at(self, step: int) -> float:
        if np.isscalar(self.rain):
            return float(self.rain)
        rain = np.atleast_1d(np.asarray(self.rain, dtype=float))
        return float(rain[min(step, len(rain) - 1)])


@dataclass(frozen=True)
class PerceptionObservation:
    observer: int
    target: int
    state: np.ndarray  # perceived target state, truth + deviation
    confidence: float
    deviation: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0,1]")


def sample_perception(
    truth: np.ndarray, settings: UncertaintySettings, seed: int, step: int
) -> dict[tuple[int, int], PerceptionObservation]:
    """Observations for every ordered (observer, target) pair.

    Deviations are uniform draws from the configured intervals using the
    observer's stream; targets are visited in index order so draws are
    reproducible.  A deviation persists for `perception_hold_steps`
    control steps before being redrawn, mimicking the dwell of real
    detector errors (an occluded box stays shifted the same way for a
    while, it does not flicker at the control rate).
    """
    truth = np.asarray(truth, dtype=float)
    K = truth.shape[0]
    ranges = np.asarray(settings.perception_ranges)
    draw_index = step // settings.perception_hold_steps
    out: dict[tuple[int, int], PerceptionObservation] = {}
    for k in range(K):
        rng = stream(seed, k, PURPOSE_PERCEPTION, draw_index)
        for j in range(K):
            if j == k:
                continue
            dev = rng.uniform(ranges[:, 0], ranges[:, 1])
            if settings.confidence_model == "fixed":
                rho = settings.confidence
            else:
                rng_dist = float(np.hypot(*(truth[j, :2] - truth[k, :2])))
                rho = float(np.clip(1.0 - rng_dist / settings.decay_range_max, 0.0, 1.0))
            out[(k, j)] = PerceptionObservation(
                observer=k, target=j, state=truth[j] + dev, confidence=rho, deviation=dev
            )
    return out


def sample_connectivity(K: int, sigma: float, seed: int, step: int) -> np.ndarray:
    """Directed 0/1 connectivity with unit diagonal; row k uses k's stream."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0,1]")
    I = np.eye(K, dtype=np.int8)
    for k in range(K):
        rng = stream(seed, k, PURPOSE_CONNECTIVITY, step)
        draws = (rng.random(K) < sigma).astype(np.int8)
        draws[k] = 1
        I[k] = draws
    return I


@dataclass(frozen=True)
class FusionResult:
    rho_hat: float
    source: int
    observation: PerceptionObservation


def max_score_fusion(
    sources: dict[int, PerceptionObservation], connected: np.ndarray, ego: int
) -> FusionResult:
    """Keep the most confident connected detection; ties go to the lowest
    vehicle index.  The ego detection must be present (a vehicle always
    hears itself)."""
    if not connected[ego] or ego not in sources:
        raise ValueError("ego source must be connected and present")
    best_l = None
    best_rho = -1.0
    for l in sorted(sources):
        if not connected[l]:
            continue
        if sources[l].confidence > best_rho:
            best_rho = sources[l].confidence
            best_l = l
    return FusionResult(rho_hat=best_rho, source=best_l, observation=sources[best_l])


def safety_margin(rho: float, d_min: float, d_max: float) -> float:
    """d_min + (1 - rho) * d_max, affine and decreasing in the confidence."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("confidence must lie in [0,1]")
    if d_min < 0 or d_max < 0:
        raise ValueError("margins must be nonnegative")
    return d_min + (1.0 - rho) * d_max


def fused_margin(fusion: FusionResult, d_min: float, d_max: float) -> float:
    return safety_margin(fusion.rho_hat, d_min, d_max)


def regularizer_weight(rain: float, alpha_base: float, proportional: bool) -> float:
    """alpha_base when pinned, alpha_base * rain in proportional mode."""
    if not 0.0 <= rain <= 1.0:
        raise ValueError("rain rate must lie in [0,1]")
    if alpha_base < 0:
        raise ValueError("alpha must be nonnegative")
    return alpha_base * rain if proportional else alpha_base


def motion_mismatch(commanded: np.ndarray, realized: np.ndarray) -> np.ndarray:
    """Componentwise gap between intended and realized state."""
    return np.asarray(commanded, dtype=float) - np.asarray(realized, dtype=float)


def rain_slip(seed: int, vehicle: int, step: int, rain: float) -> float:
    """Multiplicative slip factor eta ~ U(-rain/2, rain/2); 0 in the dry."""
    if rain == 0.0:
        return 0.0
    rng = stream(seed, vehicle, PURPOSE_RAIN, step)
    return float(rng.uniform(-0.5 * rain, 0.5 * rain))


def apply_slip(z: np.ndarray, z_next: np.ndarray, eta: float) -> np.ndarray:
    """Scale the lateral displacement and heading change by (1 + eta)."""
    out = np.array(z_next, dtype=float)
    out[1] = z[1] + (1.0 + eta) * (z_next[1] - z[1])
    out[2] = z[2] + (1.0 + eta) * (z_next[2] - z[2])
    return out


@dataclass
class UncertaintyContext:
    """Everything one step's planning needs to know about uncertainty."""

    step: int
    observations: dict[tuple[int, int], PerceptionObservation]
    connectivity: np.ndarray
    fused: dict[tuple[int, int], FusionResult]
    margins: dict[tuple[int, int], float]
    alpha_t: float
    rain_t: float
    mismatch: np.ndarray  # (K,4) commanded-minus-realized per vehicle
    epsilon: float = 0.05


def build_context(
    truth: np.ndarray,
    settings: UncertaintySettings,
    d_min: float,
    d_max: np.ndarray,
    seed: int,
    step: int,
    mismatch: np.ndarray | None = None,
) -> UncertaintyContext:
    """Sample one step's draws and derive fused confidences and margins.

    `d_max` is the per-observer maximum detection error; margins use the
    observer's own d_max as the margin inflation cap, so every margin
    lies in [d_min, d_min + d_max[k]].
    """
    truth = np.asarray(truth, dtype=float)
    K = truth.shape[0]
    obs = sample_perception(truth, settings, seed, step)
    conn = sample_connectivity(K, settings.sigma, seed, step)
    fused: dict[tuple[int, int], FusionResult] = {}
    margins: dict[tuple[int, int], float] = {}
    for k in range(K):
        for j in range(K):
            if j == k:
                continue
            sources = {l: obs[(l, j)] for l in range(K) if l != j}
            fused[(k, j)] = max_score_fusion(sources, conn[k], ego=k)
            margins[(k, j)] = fused_margin(fused[(k, j)], d_min, float(d_max[k]))
    rain_t = settings.rain_at(step)
    return UncertaintyContext(
        step=step,
        observations=obs,
        connectivity=conn,
        fused=fused,
        margins=margins,
        alpha_t=regularizer_weight(rain_t, settings.alpha_base, settings.alpha_proportional),
        rain_t=rain_t,
        mismatch=np.zeros((K, 4)) if mismatch is None else np.asarray(mismatch, dtype=float),
        epsilon=settings.epsilon,
    )
