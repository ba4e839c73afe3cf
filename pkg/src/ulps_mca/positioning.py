"""Hyperbolic (TDoA) multilateration from per-channel arrival times.

The receiver free-runs, so only differences of arrival times, corrected for
the TDMA slot spacing, carry geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import BeaconArray, SPEED_OF_SOUND
from .mca import ToaResult
from .waveform import TdmaSchedule


@dataclass(frozen=True, eq=False)
class TdoaSet:
    """Range differences ``d_i - d_ref`` in meters; NaN where ``valid`` is False."""

    reference: int
    range_diffs: np.ndarray
    valid: np.ndarray

    @property
    def n_valid(self) -> int:
        """Number of usable differences, reference excluded."""
        return int(self.valid.sum()) - 1

    def channels(self) -> list[int]:
        return [i for i in range(self.valid.size) if self.valid[i] and i != self.reference]


@dataclass(frozen=True)
class PositionFix:
    position: tuple[float, float, float]
    residual_rms: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    tolerance: float = 1e-10
    initial_guess: str = "centroid"  # or "grid"
    fixed_z: float | None = None
    drop_below_array: float = 1.0
    coverage: tuple[float, float, float, float, float, float] = (-1.5, 1.5, -1.5, 1.5, 0.0, 2.5)
    grid_step: float = 0.25

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.initial_guess not in ("centroid", "grid"):
            raise ValueError(f"unknown initial guess strategy {self.initial_guess!r}")


def toas_to_tdoas(toa: ToaResult, schedule: TdmaSchedule, fs_rx: float,
                  c: float = SPEED_OF_SOUND, min_valid: int = 4,
                  bound: float | None = None) -> TdoaSet:
    """Slot-corrected range differences against the lowest-index valid channel.

    ``min_valid`` is the number of channels with a ToA required.  Differences
    larger than ``bound`` meters in magnitude are flagged invalid.
    """
    valid = np.array([t is not None for t in toa.toa])
    if valid.sum() < min_valid:
        raise ValueError(f"{int(valid.sum())} valid ToAs, need at least {min_valid}")
    ref = int(np.flatnonzero(valid)[0])
    diffs = np.full(valid.size, np.nan)
    for i in np.flatnonzero(valid):
        dt = (toa.toa[i] - toa.toa[ref]) / fs_rx
        dt -= (schedule.slot_of(i) - schedule.slot_of(ref)) * schedule.slot_seconds
        diffs[i] = c * dt
    if bound is not None:
        bad = valid & (np.abs(np.nan_to_num(diffs)) > bound)
        diffs[bad] = np.nan
        valid = valid & ~bad
        if valid.sum() < min_valid:
            raise ValueError(f"{int(valid.sum())} range differences within {bound:.2f} m, "
                             f"need at least {min_valid}")
    return TdoaSet(ref, diffs, valid)


def sanity_bound(array: BeaconArray, coverage) -> float:
    """Largest plausible |range difference|: beacon-pair spread plus coverage diagonal."""
    p = array.positions
    spread = float(np.max(np.linalg.norm(p[:, None] - p[None], axis=2)))
    x0, x1, y0, y1, z0, z1 = coverage
    return spread + float(np.linalg.norm([x1 - x0, y1 - y0, z1 - z0]))


def true_tdoas(array: BeaconArray, position, reference: int = 0) -> TdoaSet:
    """Exact range differences for a known position."""
    d = np.linalg.norm(array.positions - np.asarray(position, dtype=float), axis=1)
    return TdoaSet(reference, d - d[reference], np.ones(array.L, dtype=bool))


def _residuals(x, beacons, ref, diffs):
    d = np.linalg.norm(beacons - x, axis=1)
    dref = np.linalg.norm(ref - x)
    return d - dref - diffs, d, dref


def _gauss_newton(x0, beacons, ref, diffs, free, cfg):
    x = np.array(x0, dtype=float)
    res, d, dref = _residuals(x, beacons, ref, diffs)
    cost = float(res @ res)
    for it in range(1, cfg.max_iterations + 1):
        jac = (x - beacons) / d[:, None] - (x - ref) / dref
        jac = jac[:, free]
        if it == 1 and np.linalg.matrix_rank(jac) < jac.shape[1]:
            raise np.linalg.LinAlgError("rank-deficient geometry at the initial guess")
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        t = 1.0
        while True:
            trial = x.copy()
            trial[free] += t * step
            r_new, d_new, dref_new = _residuals(trial, beacons, ref, diffs)
            c_new = float(r_new @ r_new)
            if c_new <= cost or t < 1e-6:
                break
            t /= 2
        moved = float(np.linalg.norm(trial - x))
        x, res, d, dref, cost = trial, r_new, d_new, dref_new, c_new
        if moved < cfg.tolerance:
            return x, cost, it, True
    return x, cost, cfg.max_iterations, False


def solve_position(tdoas: TdoaSet, array: BeaconArray, cfg: SolverConfig = SolverConfig()) -> PositionFix:
    """Least-squares position by damped Gauss-Newton on range-difference residuals.

    Starts one ``drop_below_array`` below the array centroid; falls back to
    the best point of a coarse grid over ``cfg.coverage`` if that start fails
    to converge.  Raises ``ValueError`` when too few differences are valid
    and ``numpy.linalg.LinAlgError`` for degenerate geometry.
    """
    chans = tdoas.channels()
    free = [0, 1] if cfg.fixed_z is not None else [0, 1, 2]
    if len(chans) < len(free):
        raise ValueError(f"{len(chans)} range differences cannot fix {len(free)} coordinates")
    beacons = array.positions[chans]
    ref = array.positions[tdoas.reference]
    diffs = tdoas.range_diffs[chans]

    def start(x):
        x = np.array(x, dtype=float)
        if cfg.fixed_z is not None:
            x[2] = cfg.fixed_z
        return x

    starts = []
    if cfg.initial_guess == "centroid":
        starts.append(start(array.centroid - [0.0, 0.0, cfg.drop_below_array]))
    starts.append(None)  # grid
    best = None
    for x0 in starts:
        if x0 is None:
            x0 = start(_grid_start(beacons, ref, diffs, cfg))
        x, cost, it, ok = _gauss_newton(x0, beacons, ref, diffs, free, cfg)
        if best is None or cost < best[1]:
            best = (x, cost, it, ok)
        if ok:
            break
    x, cost, it, ok = best
    rms = float(np.sqrt(cost / len(chans)))
    return PositionFix(tuple(float(v) for v in x), rms, it, bool(ok and np.all(np.isfinite(x))))


def _grid_start(beacons, ref, diffs, cfg):
    x0, x1, y0, y1, z0, z1 = cfg.coverage
    s = cfg.grid_step
    xs = np.arange(x0, x1 + s / 2, s)
    ys = np.arange(y0, y1 + s / 2, s)
    zs = np.array([cfg.fixed_z]) if cfg.fixed_z is not None else np.arange(z0, z1 + s / 2, s)
    g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    d = np.linalg.norm(g[:, None, :] - beacons[None], axis=2)
    dref = np.linalg.norm(g - ref, axis=1)
    cost = np.sum((d - dref[:, None] - diffs) ** 2, axis=1)
    return g[int(np.argmin(cost))]
