"""Monte Carlo engine: scenario realization, paired trials, threshold
calibration and parameter sweeps.

Every random quantity of a trial comes from a generator derived from the
trial seed and a fixed component tag, so adding or removing a detector never
changes what the other detectors see.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .admm import DetectionResult, SolverDivergenceError, admm_baseline_solve, admm_li_solve
from .channel import (
    ActivityState,
    ChannelSet,
    PilotMatrix,
    ReceivedSignal,
    build_channels,
    generate_pilots,
    noise_variance_from_snr,
    orthonormal_pilots,
    sample_activity,
    synthesize_signal,
)
from .geometry import ArrayLayout, DeploymentRegion, UserField, sample_user_field
from .metrics import ConfusionCounts, confusion, one_minus_balanced_accuracy
from .solver_core import AdmmConfig

log = logging.getLogger(__name__)

METHODS = ("admm_li", "baseline")
DEFAULT_SEED = 1710

# Baseline threshold on ||j_n|| calibrated at the base scenario
# (aud calibrate-threshold, 1000 held-out trials, seed 1710).
BASELINE_THRESHOLD = 2.04

# sweep variable -> Scenario attribute
SWEEP_PARAMS = {
    "snr_db": "snr_db",
    "mu": "rician_mu",
    "sigma": "location_error_std",
    "T": "pilot_length",
    "N": "n_users",
    "K": "n_active",
    "M": "n_antennas",
}
INTEGER_PARAMS = {"T", "N", "K", "M"}

# SeedSequence spawn-key namespaces
EVALUATION_STREAM = 0
CALIBRATION_STREAM = 1

# per-trial component tags
_GEOMETRY, _PILOTS, _ACTIVITY, _NLOS, _NOISE = range(5)


@dataclass(frozen=True)
class Scenario:
    """Deployment and link parameters; defaults are the base configuration."""

    n_users: int = 24
    n_active: int = 4
    n_antennas: int = 32
    carrier_frequency: float = 1.71e9
    pilot_length: int = 6
    r_min: float = 20.0
    r_max: float = 80.0
    theta_min: float = -3 * math.pi / 7
    theta_max: float = 3 * math.pi / 7
    snr_db: float = 0.0
    rician_mu: float = math.inf
    location_error_std: float = 0.0
    fixed_k: bool = False
    orthonormal_pilots: bool = False

    @property
    def layout(self) -> ArrayLayout:
        return ArrayLayout(self.n_antennas, self.carrier_frequency)

    @property
    def region(self) -> DeploymentRegion:
        return DeploymentRegion(self.r_min, self.r_max, self.theta_min, self.theta_max,
                                layout=self.layout)

    @property
    def noise_variance(self) -> float:
        return noise_variance_from_snr(self.snr_db)

    def validate(self) -> "Scenario":
        """Raise ``ValueError`` naming the first violated constraint."""
        for name in ("n_users", "n_active", "n_antennas", "pilot_length"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not self.n_active < self.n_users:
            raise ValueError(f"need n_active < n_users, got K={self.n_active}, N={self.n_users}")
        if self.orthonormal_pilots and self.pilot_length != self.n_users:
            raise ValueError("orthonormal pilots require pilot_length == n_users")
        if not self.rician_mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.rician_mu}")
        if not self.location_error_std >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.location_error_std}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"snr_db must be a number or +inf, got {self.snr_db}")
        self.region  # geometry and near-field checks
        return self


@dataclass(frozen=True)
class Realization:
    """One random draw of everything a trial needs."""

    scenario: Scenario
    field: UserField
    pilots: PilotMatrix
    activity: ActivityState
    channels: ChannelSet
    signal: ReceivedSignal

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.signal.y, self.pilots.matrix, self.channels.estimate, self.activity.active):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TrialOutcome:
    method: str
    trial_seed: int
    detection: DetectionResult
    counts: ConfusionCounts
    wall_time: float

    @property
    def one_minus_a(self) -> float:
        return one_minus_balanced_accuracy(self.counts)

    @property
    def tpr(self) -> float:
        return self.counts.tpr

    @property
    def tnr(self) -> float:
        return self.counts.tnr


class TrialError(RuntimeError):
    """A detector failed; carries the seed needed to replay the trial."""

    def __init__(self, trial_seed: int, method: str, cause: BaseException):
        super().__init__(f"{method} failed on trial_seed={trial_seed}: {cause}")
        self.trial_seed = trial_seed
        self.method = method
        self.cause = cause


def trial_seed(master_seed: int, cell_index: int, trial_index: int,
               stream: int = EVALUATION_STREAM) -> int:
    """Counter-based seed for one trial of one grid cell."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream, cell_index, trial_index))
    return int(ss.generate_state(1, np.uint64)[0])


def component_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


def realize(scenario: Scenario, seed: int) -> Realization:
    region = scenario.region
    layout = scenario.layout
    user_field = sample_user_field(region, scenario.n_users, scenario.location_error_std,
                                   component_rng(seed, _GEOMETRY))
    rng = component_rng(seed, _PILOTS)
    if scenario.orthonormal_pilots:
        pilots = orthonormal_pilots(scenario.n_users, rng)
    else:
        pilots = generate_pilots(scenario.pilot_length, scenario.n_users, rng)
    activity = sample_activity(scenario.n_users, scenario.n_active, user_field, layout.wavelength,
                               component_rng(seed, _ACTIVITY), fixed_k=scenario.fixed_k)
    channels = build_channels(user_field, layout, scenario.rician_mu, component_rng(seed, _NLOS))
    signal = synthesize_signal(pilots.matrix, activity.matrix, channels.total,
                               scenario.noise_variance, component_rng(seed, _NOISE))
    return Realization(scenario, user_field, pilots, activity, channels, signal)


def _solve(method: str, real: Realization, config: AdmmConfig) -> DetectionResult:
    if method == "admm_li":
        return admm_li_solve(real.signal.y, real.pilots.matrix, real.channels.estimate, config)
    if method == "baseline":
        return admm_baseline_solve(real.signal.y, real.pilots.matrix, config)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def default_configs() -> Dict[str, AdmmConfig]:
    return {"admm_li": AdmmConfig(),
            "baseline": AdmmConfig(activity_threshold=BASELINE_THRESHOLD)}


def run_trial(scenario: Scenario, methods: Sequence[str], seed: int,
              configs: Optional[Mapping[str, AdmmConfig]] = None,
              probe: Optional[Callable[[str, Realization], None]] = None) -> Dict[str, TrialOutcome]:
    """Run every requested detector on the same realization.

    ``probe``, if given, is called as ``probe(method, realization)`` right
    before each detector runs.
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; expected a subset of {METHODS}")
    configs = {**default_configs(), **(configs or {})}
    real = realize(scenario, seed)
    truth = real.activity.active_set
    out = {}
    for method in methods:
        if probe is not None:
            probe(method, real)
        start = time.perf_counter()
        try:
            det = _solve(method, real, configs[method])
        except (SolverDivergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise TrialError(seed, method, exc) from exc
        elapsed = time.perf_counter() - start
        out[method] = TrialOutcome(method, seed, det,
                                   confusion(truth, det.detected, scenario.n_users), elapsed)
    return out


# -- threshold calibration ---------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    one_minus_a: float
    candidates: np.ndarray
    errors: np.ndarray


def mean_error_for_thresholds(scores: np.ndarray, active: np.ndarray,
                              thresholds: np.ndarray) -> np.ndarray:
    """Mean ``1 - A`` over trials for each candidate threshold.

    ``scores`` and ``active`` are ``(trials, N)``.
    """
    k = active.sum(axis=1)
    neg = active.shape[1] - k
    out = np.empty(len(thresholds))
    for i0 in range(0, len(thresholds), 128):
        tau = thresholds[i0:i0 + 128, None, None]
        det = scores[None] > tau
        tpr = (det & active[None]).sum(axis=2) / k
        tnr = (~det & ~active[None]).sum(axis=2) / neg
        out[i0:i0 + 128] = (1 - 0.5 * (tpr + tnr)).mean(axis=1)
    return out


def best_threshold(scores: np.ndarray, active: np.ndarray, n_candidates: int = 512):
    """Threshold minimizing mean ``1 - A``, chosen among midpoints of score quantiles."""
    q = np.unique(np.quantile(scores, np.linspace(0.0, 1.0, n_candidates)))
    candidates = np.concatenate([[0.0], 0.5 * (q[1:] + q[:-1]), [q[-1] * 1.01 + 1e-12]])
    errors = mean_error_for_thresholds(scores, active, candidates)
    i = int(np.argmin(errors))
    return CalibrationResult(float(candidates[i]), float(errors[i]), candidates, errors)


def calibrate_threshold(scenario: Scenario, method: str, config: AdmmConfig, trials: int,
                        master_seed: int = DEFAULT_SEED, cell_index: int = 0,
                        threads: int = 1) -> CalibrationResult:
    """Tune one detector's activity threshold on held-out trials.

    The trials use the calibration seed stream, disjoint from the one used
    for evaluation, so a calibrated threshold is never fit on the trials it
    is scored on.
    """
    scenario.validate()
    seeds = [trial_seed(master_seed, cell_index, i, CALIBRATION_STREAM) for i in range(trials)]

    def one(seed):
        real = realize(scenario, seed)
        return _solve(method, real, config).scores, real.activity.active

    rows = list(_map(one, seeds, threads))
    scores = np.array([r[0] for r in rows])
    active = np.array([r[1] for r in rows])
    return best_threshold(scores, active)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    """A one-dimensional sweep over ``sweep_param`` around ``scenario``.

    Methods listed in ``calibrated`` get their threshold re-tuned at every
    grid point with ``calibration_trials`` held-out trials; the others use the
    threshold in ``configs``.
    """

    scenario: Scenario = Scenario()
    sweep_param: str = "snr_db"
    grid: tuple = (0.0,)
    methods: tuple = METHODS
    trials: int = 1000
    master_seed: int = DEFAULT_SEED
    configs: Mapping[str, AdmmConfig] = field(default_factory=default_configs)
    calibrated: tuple = ("baseline",)
    calibration_trials: int = 1000
    name: str = "single"

    def scenario_at(self, value) -> Scenario:
        if self.sweep_param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.sweep_param!r}; "
                             f"expected one of {sorted(SWEEP_PARAMS)}")
        if self.sweep_param in INTEGER_PARAMS:
            if float(value) != int(value):
                raise ValueError(f"{self.sweep_param} must be an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
        return dataclasses.replace(self.scenario, **{SWEEP_PARAMS[self.sweep_param]: value})

    def validate(self) -> "ExperimentPlan":
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials!r}")
        if not self.methods:
            raise ValueError("no methods selected")
        for m in (*self.methods, *self.calibrated):
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
        if any(m in self.calibrated for m in self.methods) and self.calibration_trials < 1:
            raise ValueError("calibration_trials must be >= 1")
        for m in self.methods:
            if m not in self.configs:
                raise ValueError(f"no solver configuration for method {m!r}")
        for v in self.grid:
            try:
                self.scenario_at(v).validate()
            except ValueError as exc:
                raise ValueError(f"grid point {self.sweep_param}={v}: {exc}") from exc
        return self


@dataclass(frozen=True)
class PointResult:
    sweep_value: float
    method: str
    one_minus_a: float
    tpr: float
    tnr: float
    std_err: float
    trials: int
    failed_trials: int
    wall_ms_per_trial: float
    threshold: float


@dataclass(frozen=True)
class TrialFailure:
    sweep_value: float
    trial_index: int
    trial_seed: int
    method: str
    message: str


@dataclass
class SweepResult:
    plan: ExperimentPlan
    points: list
    failures: list

    def point(self, value, method: str) -> PointResult:
        for p in self.points:
            if p.method == method and p.sweep_value == value:
                return p
        raise KeyError((value, method))

    def series(self, method: str):
        pts = [p for p in self.points if p.method == method]
        return np.array([p.sweep_value for p in pts]), np.array([p.one_minus_a for p in pts])


def _map(fn, items, threads):
    if threads <= 1:
        return map(fn, items)
    pool = ThreadPoolExecutor(max_workers=threads)
    try:
        return list(pool.map(fn, items))
    finally:
        pool.shutdown()


def _aggregate(value, method, outcomes, requested, threshold) -> PointResult:
    errs = np.array([o.one_minus_a for o in outcomes])
    n = len(errs)
    if n == 0:
        nan = float("nan")
        return PointResult(value, method, nan, nan, nan, nan, requested, requested, nan, threshold)
    se = float(errs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return PointResult(
        sweep_value=value,
        method=method,
        one_minus_a=float(errs.mean()),
        tpr=float(np.mean([o.tpr for o in outcomes])),
        tnr=float(np.mean([o.tnr for o in outcomes])),
        std_err=se,
        trials=requested,
        failed_trials=requested - n,
        wall_ms_per_trial=1e3 * float(np.mean([o.wall_time for o in outcomes])),
        threshold=threshold,
    )


def run_sweep(plan: ExperimentPlan, threads: int = 1,
              progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Run every (grid point, trial) cell and reduce in a fixed order.

    Results do not depend on ``threads``: each trial's seed is a function of
    (master seed, grid index, trial index) only and per-trial values are
    reduced by index.
    """
    plan.validate()
    points, failures = [], []
    for cell, value in enumerate(plan.grid):
        scenario = plan.scenario_at(value)
        configs = dict(plan.configs)
        for m in plan.methods:
            if m in plan.calibrated:
                cal = calibrate_threshold(scenario, m, configs[m], plan.calibration_trials,
                                          plan.master_seed, cell, threads)
                configs[m] = dataclasses.replace(configs[m], activity_threshold=cal.threshold)
                log.info("%s=%s: calibrated %s threshold %.6g (1-A=%.4g)",
                         plan.sweep_param, value, m, cal.threshold, cal.one_minus_a)

        def one(i, scenario=scenario, configs=configs):
            seed = trial_seed(plan.master_seed, cell, i)
            try:
                return i, run_trial(scenario, plan.methods, seed, configs)
            except TrialError as exc:
                return i, exc

        per_method = {m: [] for m in plan.methods}
        for i, res in _map(lambda i: one(i), range(plan.trials), threads):
            if isinstance(res, TrialError):
                failures.append(TrialFailure(value, i, res.trial_seed, res.method, str(res.cause)))
                log.warning("%s", res)
                continue
            for m in plan.methods:
                per_method[m].append(res[m])
        for m in plan.methods:
            points.append(_aggregate(value, m, per_method[m], plan.trials,
                                     configs[m].activity_threshold))
        if progress is not None:
            summary = ", ".join(f"{p.method}={p.one_minus_a:.4g}" for p in points[-len(plan.methods):])
            progress(f"{plan.sweep_param}={value}: {summary}")
    return SweepResult(plan, points, failures)
