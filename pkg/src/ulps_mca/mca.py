"""Multipath compensation: TDMA-constrained matching pursuit and LoS selection.

Every channel's dictionary is the set of time shifts of its receiver-rate
pattern.  At each iteration the strongest shift of every channel is found on
the current residue; if the candidates are mutually consistent with the TDMA
slot spacing the strongest one is stored as a channel tap, otherwise the
offending channel's candidate is removed from the residue without being
stored.  The LoS of a channel is then its earliest stored tap whose magnitude
exceeds a fraction of the channel's strongest tap.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy import signal

from .channel import ReceivedBuffer
from .waveform import CodePattern, TdmaSchedule


@dataclass(frozen=True)
class McaConfig:
    """Design parameters.

    ``M`` minimum stored taps per channel, ``gamma`` LoS threshold fraction,
    ``J`` iteration cap, ``delta_samples`` window half-width, and
    ``epsilon_stop`` the early-stop fraction of the first selected amplitude
    (0 disables it).
    """

    M: int = 3
    gamma: float = 0.1
    J: int = 32
    delta_samples: int = 150
    epsilon_stop: float = 0.02
    check_windows: bool = True

    def __post_init__(self):
        if self.M < 1 or self.J < 1:
            raise ValueError("M and J must be >= 1")
        if self.M > self.J:
            raise ValueError(f"M = {self.M} exceeds J = {self.J}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta_samples < 0:
            raise ValueError("delta_samples must be nonnegative")
        if self.epsilon_stop < 0:
            raise ValueError("epsilon_stop must be nonnegative")


@dataclass(frozen=True)
class WindowVerdict:
    violated_pairs: tuple[tuple[int, int], ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violated_pairs

    @property
    def violating(self) -> frozenset[int]:
        return frozenset(ch for pair in self.violated_pairs for ch in pair)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    candidates: tuple[tuple[int, float], ...]
    window_passed: bool
    violated_pairs: tuple[tuple[int, int], ...]
    selected_channel: int
    location: int
    amplitude: float
    action: str  # "stored", "discarded" or "stopped"
    residue_energy: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidates"] = [list(c) for c in self.candidates]
        d["violated_pairs"] = [list(p) for p in self.violated_pairs]
        return d


@dataclass(frozen=True)
class ChannelEstimate:
    """Stored taps ``(location, amplitude)`` per channel, in storage order."""

    components: tuple[tuple[tuple[int, float], ...], ...]
    log: tuple[IterationRecord, ...] = field(repr=False)
    initial_energy: float = 0.0
    residue_energy: float = 0.0
    n_samples: int = 0

    @property
    def L(self) -> int:
        return len(self.components)

    @property
    def n_discarded(self) -> int:
        return sum(rec.action == "discarded" for rec in self.log)


@dataclass(frozen=True)
class ToaResult:
    toa: tuple[int | None, ...]
    candidates: tuple[tuple[int, ...], ...]
    method: str
    low_confidence: tuple[bool, ...] = ()

    @property
    def L(self) -> int:
        return len(self.toa)


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if hasattr(x, "samples") else x, dtype=float)


def correlate_channel(residue, pattern) -> np.ndarray:
    """Normalized projection of the residue onto every full shift of the pattern.

    ``out[l] = <pattern placed at l, residue> / ||pattern||**2`` for
    ``l = 0 .. len(residue) - len(pattern)``.
    """
    r, p = _samples(residue), _samples(pattern)
    if p.size > r.size:
        raise ValueError(f"pattern ({p.size} samples) longer than buffer ({r.size})")
    return signal.correlate(r, p, mode="valid") / np.dot(p, p)


def best_candidate(projections, search_window: tuple[int, int] | None = None,
                   exclude=()) -> tuple[int, float]:
    """Lag of the largest |projection| in ``[lo, hi)``, with its signed value.

    Ties go to the smallest lag.  Lags in ``exclude`` are skipped.
    """
    proj = np.asarray(projections, dtype=float)
    lo, hi = (0, proj.size) if search_window is None else search_window
    lo, hi = max(lo, 0), min(hi, proj.size)
    mag = np.abs(proj[lo:hi])
    for l in exclude:
        if lo <= l < hi:
            mag[l - lo] = -1.0
    if mag.size == 0 or mag.max() < 0:
        raise ValueError("empty search window")
    l = lo + int(np.argmax(mag))
    return l, float(proj[l])


def check_timing_windows(candidates: Sequence[int], schedule: TdmaSchedule, fs_rx: float,
                         delta_samples: int, active: Sequence[bool] | None = None) -> WindowVerdict:
    """Check consecutive-slot candidate spacings against ``slot +/- delta``.

    Pairs follow the slot order and do not wrap from the last slot to the
    first.  Channels flagged inactive are skipped; the two channels around a
    skipped one must then be the matching number of slots apart.
    """
    if len(candidates) != schedule.n_channels:
        raise ValueError(f"{len(candidates)} candidates for {schedule.n_channels} channels")
    slot = schedule.slot_samples(fs_rx)
    chain = [(k, ch) for k, ch in enumerate(schedule.order) if active is None or active[ch]]
    violated = []
    for (k0, cur), (k1, nxt) in zip(chain, chain[1:]):
        diff = candidates[nxt] - candidates[cur]
        span = (k1 - k0) * slot
        if not span - delta_samples <= diff <= span + delta_samples:
            violated.append((cur, nxt))
    return WindowVerdict(tuple(violated))


def spurious_channel(verdict: WindowVerdict, candidates: Sequence[tuple[int, float]],
                     schedule: TdmaSchedule, fs_rx: float) -> int:
    """Channel blamed for a failed window check.

    Each violated pair votes for its member that arrived late relative to the
    slot spacing (reflections only add delay).  Most votes wins, then larger
    |amplitude|, then the lower channel index.
    """
    if verdict.passed:
        raise ValueError("no violated pairs to blame")
    slot = schedule.slot_samples(fs_rx)
    votes: dict[int, int] = {}
    for cur, nxt in verdict.violated_pairs:
        span = (schedule.slot_of(nxt) - schedule.slot_of(cur)) * slot
        late = nxt if candidates[nxt][0] - candidates[cur][0] > span else cur
        votes[late] = votes.get(late, 0) + 1
    return min(votes, key=lambda ch: (-votes[ch], -abs(candidates[ch][1]), ch))


_gram_cache: dict[bytes, list] = {}
_gram_lock = threading.Lock()


def _cross_correlations(patterns: list[np.ndarray]) -> list[list[np.ndarray]]:
    """``xc[i][a][k - l + len(p_i) - 1] = <p_i shifted to k, p_a shifted to l>``."""
    h = hashlib.sha1()
    for p in patterns:
        h.update(np.int64(p.size).tobytes())
        h.update(p.tobytes())
    key = h.digest()
    with _gram_lock:
        hit = _gram_cache.get(key)
    if hit is not None:
        return hit
    xc = [[np.correlate(pa, pi, mode="full") for pa in patterns] for pi in patterns]
    with _gram_lock:
        if len(_gram_cache) > 16:
            _gram_cache.clear()
        _gram_cache[key] = xc
    return xc


def cross_talk_bounds(patterns: Sequence, xc=None) -> np.ndarray:
    """``K[i, a]``: largest |projection| onto channel ``i`` of a unit-amplitude pattern ``a``.

    The diagonal is zero.
    """
    pats = [_samples(p) for p in patterns]
    xc = xc if xc is not None else _cross_correlations(pats)
    L = len(pats)
    k = np.zeros((L, L))
    for i in range(L):
        n = float(np.dot(pats[i], pats[i]))
        for a in range(L):
            if a != i:
                k[i, a] = float(np.abs(xc[i][a]).max()) / n
    return k


def run_mca(buffer, patterns: Sequence[CodePattern], schedule: TdmaSchedule,
            cfg: McaConfig = McaConfig(), fs_rx: float | None = None) -> ChannelEstimate:
    """Estimate every channel's sparse impulse response from one buffer.

    Stops once every channel holds at least ``cfg.M`` taps, after ``cfg.J``
    iterations, or when the selected amplitude drops below
    ``cfg.epsilon_stop`` times the first selected amplitude.
    """
    r = _samples(buffer).copy()
    if fs_rx is None:
        fs_rx = buffer.rate_hz if isinstance(buffer, ReceivedBuffer) else patterns[0].rate_hz
    pats = [_samples(p) for p in patterns]
    L = len(pats)
    if L != schedule.n_channels:
        raise ValueError(f"{L} patterns for {schedule.n_channels} scheduled channels")
    if cfg.check_windows and cfg.delta_samples >= schedule.slot_samples(fs_rx) / 2:
        raise ValueError("delta_samples must be below half a slot")
    energy0 = float(np.dot(r, r))
    if energy0 == 0:
        raise ValueError("buffer has zero energy")
    for i, p in enumerate(pats):
        if p.size > r.size:
            raise ValueError(f"pattern {i} ({p.size} samples) longer than buffer ({r.size})")

    norms = [float(np.dot(p, p)) for p in pats]
    proj = [correlate_channel(r, p) for p in pats]
    xc = _cross_correlations(pats)
    kappa = cross_talk_bounds(pats, xc)
    stored: list[dict[int, float]] = [{} for _ in range(L)]
    peak = [0.0] * L
    log: list[IterationRecord] = []
    first = None

    for j in range(cfg.J):
        cands = [best_candidate(proj[i], exclude=stored[i]) for i in range(L)]
        # once a channel holds a stored tap, a candidate under gamma * its
        # strongest component, or one explainable as cross-talk from the other
        # channels' candidates, leaves the window check
        mags = np.array([abs(c[1]) for c in cands])
        leak = kappa @ mags
        settled = [bool(stored[i]) and (mags[i] <= cfg.gamma * peak[i] or mags[i] <= leak[i])
                   for i in range(L)]
        if all(st or len(s) >= cfg.M for st, s in zip(settled, stored)):
            break
        active = [not st for st in settled]
        if cfg.check_windows:
            verdict = check_timing_windows([c[0] for c in cands], schedule, fs_rx,
                                           cfg.delta_samples, active)
        else:
            verdict = WindowVerdict()
        if verdict.passed:
            a = max((i for i in range(L) if active[i]), key=lambda i: (abs(cands[i][1]), -i))
        else:
            a = spurious_channel(verdict, cands, schedule, fs_rx)
        l, h = cands[a]
        residue_energy = float(np.dot(r, r))
        if h == 0.0 or (first is not None and cfg.epsilon_stop > 0
                        and abs(h) < cfg.epsilon_stop * first):
            log.append(IterationRecord(j, tuple(cands), verdict.passed, verdict.violated_pairs,
                                       a, l, h, "stopped", residue_energy))
            break
        if first is None:
            first = abs(h)
        if verdict.passed:
            stored[a][l] = h
        peak[a] = max(peak[a], abs(h))
        pa = pats[a]
        r[l:l + pa.size] -= h * pa
        for i in range(L):
            pi = pats[i]
            lo = max(l - pi.size + 1, 0)
            hi = min(l + pa.size, proj[i].size)
            if lo >= hi:
                continue
            base = lo - l + pi.size - 1
            proj[i][lo:hi] -= h * xc[i][a][base:base + hi - lo] / norms[i]
        log.append(IterationRecord(j, tuple(cands), verdict.passed, verdict.violated_pairs,
                                   a, l, h, "stored" if verdict.passed else "discarded",
                                   float(np.dot(r, r))))

    comps = tuple(tuple(s.items()) for s in stored)
    return ChannelEstimate(comps, tuple(log), energy0, float(np.dot(r, r)), r.size)


def select_los(est: ChannelEstimate, gamma: float = 0.1) -> ToaResult:
    """Earliest stored tap with |amplitude| above ``gamma`` times the channel maximum.

    The strongest tap always qualifies, so ``gamma = 1`` selects it.
    Channels without stored taps get ``None``.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    toas, cands = [], []
    for comps in est.components:
        if not comps:
            toas.append(None)
            cands.append(())
            continue
        locs = np.array([c[0] for c in comps])
        mags = np.abs(np.array([c[1] for c in comps]))
        keep = mags > gamma * mags.max()
        keep[np.argmax(mags)] = True
        b = tuple(sorted(int(x) for x in locs[keep]))
        cands.append(b)
        toas.append(b[0])
    return ToaResult(tuple(toas), tuple(cands), "mca", (False,) * len(toas))


def classical_toa(buffer, patterns: Sequence[CodePattern], schedule: TdmaSchedule,
                  delta_samples: int = 150, fs_rx: float | None = None) -> ToaResult:
    """Matched-filter peak per channel, searched within the channel's slot +/- delta.

    A channel is flagged low-confidence when its peak is under three times the
    median |output| of its search window.
    """
    r = _samples(buffer)
    if fs_rx is None:
        fs_rx = buffer.rate_hz if isinstance(buffer, ReceivedBuffer) else patterns[0].rate_hz
    if len(patterns) != schedule.n_channels:
        raise ValueError(f"{len(patterns)} patterns for {schedule.n_channels} scheduled channels")
    if not np.any(r):
        raise ValueError("buffer has zero energy")
    slot = schedule.slot_samples(fs_rx)
    toas, cands, low = [], [], []
    for i, p in enumerate(patterns):
        proj = correlate_channel(r, p)
        k = schedule.slot_of(i)
        window = (k * slot - delta_samples, (k + 1) * slot + delta_samples)
        l, h = best_candidate(proj, window)
        seg = np.abs(proj[max(window[0], 0):min(window[1], proj.size)])
        toas.append(l)
        cands.append((l,))
        low.append(bool(abs(h) < 3 * np.median(seg)))
    return ToaResult(tuple(toas), tuple(cands), "classical", tuple(low))
