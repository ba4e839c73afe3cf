"""Monte-Carlo trials, error ECDFs and M/gamma sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import (ChannelRealization, ReceivedBuffer, add_reflector_echo, direct_path_taps,
                      image_source_taps, render_received)
from .mca import McaConfig, ToaResult, classical_toa, run_mca, select_los
from .positioning import PositionFix, sanity_bound, solve_position, toas_to_tdoas
from .scenario import Scenario, Setup

METHODS = ("mca", "classical")


@dataclass(frozen=True)
class TrialSpec:
    scenario: Scenario
    methods: tuple[str, ...] = METHODS
    trials: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown method(s) {sorted(bad)}")


@dataclass(frozen=True)
class RenderedTrial:
    index: int
    truth: np.ndarray
    channel: ChannelRealization
    buffer: ReceivedBuffer


@dataclass
class MethodOutcome:
    toa: ToaResult | None
    fix: PositionFix | None
    error: float  # inf when no fix
    discarded: int = 0


@dataclass
class TrialResults:
    spec: TrialSpec
    truths: list[np.ndarray] = field(default_factory=list)
    outcomes: dict[str, list[MethodOutcome]] = field(default_factory=dict)

    def errors(self, method: str) -> np.ndarray:
        return np.array([o.error for o in self.outcomes[method]])

    def missing(self, method: str) -> int:
        return int(np.sum(~np.isfinite(self.errors(method))))

    def discard_fraction(self) -> float:
        """Fraction of trials whose MCA run discarded at least one component."""
        return float(np.mean([o.discarded > 0 for o in self.outcomes["mca"]]))


def trial_seeds(master_seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(trials)


def render_trial(setup: Setup, index: int, seed: np.random.SeedSequence) -> RenderedTrial:
    """Draw one trial's geometry, echo delays, capture offset and noise."""
    sc = setup.scenario
    rng = np.random.default_rng(seed)
    if sc.random_receiver:
        x0, x1, y0, y1, z0, z1 = sc.coverage
        truth = rng.uniform([x0, y0, z0], [x1, y1, z1])
    else:
        truth = np.array(sc.receiver, dtype=float)
    jitter = rng.uniform(-1.0, 1.0, 3)
    if sc.jitter_m > 0:
        truth = truth + sc.jitter_m * jitter
    if sc.room.image_order > 0:
        ch = image_source_taps(setup.room, setup.array, truth, sc.speed_of_sound, sc.room.image_order)
    else:
        ch = direct_path_taps(setup.array, truth, sc.speed_of_sound)
    spread = rng.uniform(-1.0, 1.0, setup.array.L)
    if sc.reflector is not None:
        delays = (sc.reflector.delay_ms + sc.reflector.spread_ms * spread) * 1e-3
        ch = add_reflector_echo(ch, delays, sc.reflector.gain_ratio)
    lo, hi = sc.capture_offset_ms
    offset = rng.uniform(lo, hi) * 1e-3
    noise_seed = int(rng.integers(2 ** 63))
    buf = render_received(setup.frame, ch, setup.noise, sc.fs_rx, noise_seed, sc.buffer_samples,
                          offset, sc.modulation.cutoff_hz, setup.rx_patterns)
    return RenderedTrial(index, truth, ch, buf)


def locate(setup: Setup, toa: ToaResult, truth_z: float | None = None) -> PositionFix | None:
    """Position from ToAs, or ``None`` if there are too few, the solver fails,
    or the fix lands farther than the sanity bound outside the coverage box."""
    cfg = setup.solver_config(truth_z)
    need = 3 if cfg.fixed_z is not None else 4
    bound = sanity_bound(setup.array, setup.scenario.coverage)
    try:
        tdoas = toas_to_tdoas(toa, setup.schedule, setup.scenario.fs_rx,
                              setup.scenario.speed_of_sound, min_valid=need, bound=bound)
        fix = solve_position(tdoas, setup.array, cfg)
    except (ValueError, np.linalg.LinAlgError):
        return None
    x0, x1, y0, y1, z0, z1 = setup.scenario.coverage
    pos = np.array(fix.position)
    outside = np.maximum(np.maximum([x0, y0, z0] - pos, pos - [x1, y1, z1]), 0.0)
    if not fix.converged or np.linalg.norm(outside) > bound:
        return None
    return fix


def estimate(setup: Setup, buffer: ReceivedBuffer, method: str,
             cfg: McaConfig | None = None) -> tuple[ToaResult, int]:
    """ToAs by ``method``; also returns the number of discarded MCA iterations."""
    if method == "mca":
        cfg = cfg or setup.mca_config
        est = run_mca(buffer, setup.rx_patterns, setup.schedule, cfg)
        return select_los(est, cfg.gamma), est.n_discarded
    return classical_toa(buffer, setup.rx_patterns, setup.schedule, setup.delta_samples), 0


def _error(fix: PositionFix | None, truth) -> float:
    if fix is None:
        return math.inf
    return float(np.linalg.norm(np.array(fix.position) - truth))


def _one_trial(setup: Setup, methods, index, seed):
    tr = render_trial(setup, index, seed)
    out = {}
    for m in methods:
        toa, discarded = estimate(setup, tr.buffer, m)
        fix = locate(setup, toa, tr.truth[2])
        out[m] = MethodOutcome(toa, fix, _error(fix, tr.truth), discarded)
    return tr.truth, out


def run_trials(spec: TrialSpec, workers: int = 1) -> TrialResults:
    """Render and solve ``spec.trials`` independent trials.

    Trial ``k`` draws its randomness from the ``k``-th child of the master
    seed, so results do not depend on ``workers``.
    """
    setup = Setup(spec.scenario)
    seeds = trial_seeds(spec.seed, spec.trials)
    jobs = [(setup, spec.methods, k, s) for k, s in enumerate(seeds)]
    res = TrialResults(spec, [], {m: [] for m in spec.methods})
    for truth, out in _map(_one_trial, jobs, workers):
        res.truths.append(truth)
        for m in spec.methods:
            res.outcomes[m].append(out[m])
    return res


def _map(fn, jobs, workers):
    if workers <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


@dataclass(frozen=True, eq=False)
class EcdfCurve:
    errors: np.ndarray
    probabilities: np.ndarray

    def __len__(self):
        return int(self.errors.size)


def ecdf(errors: Sequence[float]) -> EcdfCurve:
    """Empirical CDF; NaN errors count as missing fixes at +inf."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to summarize")
    e = np.where(np.isnan(e), np.inf, e)
    if np.any(e < 0):
        raise ValueError("errors must be nonnegative")
    e = np.sort(e)
    return EcdfCurve(e, np.arange(1, e.size + 1) / e.size)


def percentile(curve: EcdfCurve, p: float) -> float:
    """Smallest error whose cumulative probability reaches ``p``."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    k = int(np.searchsorted(curve.probabilities, p - 1e-12, side="left"))
    return float(curve.errors[min(k, len(curve) - 1)])


@dataclass(frozen=True, eq=False)
class SweepGrid:
    M_values: tuple[int, ...]
    gamma_values: tuple[float, ...]
    mean_error: np.ndarray  # shape (len(M), len(gamma))
    missing: np.ndarray

    def cell(self, M: int, gamma: float) -> float:
        return float(self.mean_error[self.M_values.index(M), self.gamma_values.index(gamma)])


def sweep(spec: TrialSpec, M_values: Sequence[int], gamma_values: Sequence[float],
          workers: int = 1) -> SweepGrid:
    """Mean MCA position error for every (M, gamma) on one fixed set of buffers.

    Missing fixes are excluded from the mean and counted in ``missing``.
    """
    if not M_values or not gamma_values:
        raise ValueError("sweep axes must be nonempty")
    setup = Setup(spec.scenario)
    seeds = trial_seeds(spec.seed, spec.trials)
    rendered = _map(lambda k, s: render_trial(setup, k, s), list(enumerate(seeds)), workers)
    base = setup.mca_config
    mean = np.zeros((len(M_values), len(gamma_values)))
    missing = np.zeros_like(mean, dtype=int)
    J = max(base.J, max(M_values))
    for a, M in enumerate(M_values):
        for b, g in enumerate(gamma_values):
            cfg = McaConfig(M, g, J, base.delta_samples, base.epsilon_stop)

            def cell(tr, cfg=cfg):
                toa, _ = estimate(setup, tr.buffer, "mca", cfg)
                return _error(locate(setup, toa, tr.truth[2]), tr.truth)

            errs = np.array(_map(cell, [(tr,) for tr in rendered], workers))
            ok = np.isfinite(errs)
            missing[a, b] = int((~ok).sum())
            mean[a, b] = float(errs[ok].mean()) if ok.any() else math.inf
    return SweepGrid(tuple(M_values), tuple(float(g) for g in gamma_values), mean, missing)
