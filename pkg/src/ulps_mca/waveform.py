"""BPSK modulation, TDMA frame assembly and rate conversion of code patterns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

from .codes import BipolarSequence

# cutoff at the 100 kHz output Nyquist
DEFAULT_CUTOFF_HZ = 50_000.0
DEFAULT_NUMTAPS = 201


@dataclass(frozen=True)
class ModulationConfig:
    """Carrier and sampling setup of the emitter.

    The carrier defaults to exactly ``fs_tx / 12`` so that one carrier cycle
    spans an integer number of transmit samples.
    """

    fs_tx: float = 500_000.0
    carrier_hz: float = 500_000.0 / 12
    cycles_per_symbol: int = 2

    def __post_init__(self):
        if self.carrier_hz <= 0 or self.fs_tx <= 0:
            raise ValueError("rates must be positive")
        if self.carrier_hz >= self.fs_tx / 2:
            raise ValueError("carrier must lie below fs_tx / 2")
        if self.cycles_per_symbol < 1:
            raise ValueError("cycles_per_symbol must be >= 1")
        ratio = self.fs_tx / self.carrier_hz
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"fs_tx / carrier_hz = {ratio} is not an integer")

    @property
    def samples_per_cycle(self) -> int:
        return int(round(self.fs_tx / self.carrier_hz))

    @property
    def samples_per_symbol(self) -> int:
        return self.samples_per_cycle * self.cycles_per_symbol


@dataclass(frozen=True, eq=False)
class CodePattern:
    samples: np.ndarray
    rate_hz: float
    code_index: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    @property
    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))


@dataclass(frozen=True)
class TdmaSchedule:
    """Slot length, emission order and window half-width of the TDMA cycle.

    ``order[k]`` is the channel that emits in slot ``k``.
    """

    slot_seconds: float = 0.020
    order: tuple[int, ...] = (0, 1, 2, 3, 4)
    delta_seconds: float = 0.0015

    def __post_init__(self):
        order = tuple(int(k) for k in self.order)
        object.__setattr__(self, "order", order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"order {order} is not a permutation of 0..{len(order) - 1}")
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be positive")
        if not 0 <= self.delta_seconds < self.slot_seconds / 2:
            raise ValueError("delta_seconds must lie in [0, slot_seconds / 2)")

    @property
    def n_channels(self) -> int:
        return len(self.order)

    def slot_of(self, channel: int) -> int:
        return self.order.index(channel)

    def slot_samples(self, rate_hz: float) -> int:
        return _exact_samples(self.slot_seconds, rate_hz, "slot")

    def delta_samples(self, rate_hz: float) -> int:
        return int(round(self.delta_seconds * rate_hz))


@dataclass(frozen=True, eq=False)
class TransmitFrame:
    """Per-channel emission streams of one TDMA cycle.

    ``streams[i]`` is channel ``i``'s emission, zero outside its slot.
    ``offsets[i]`` is the sample where channel ``i``'s pattern starts.
    """

    streams: np.ndarray
    rate_hz: float
    patterns: tuple[CodePattern, ...] = field(repr=False)
    offsets: tuple[int, ...]
    schedule: TdmaSchedule

    def __len__(self):
        return int(self.streams.shape[1])

    @property
    def n_channels(self) -> int:
        return int(self.streams.shape[0])

    @property
    def duration_s(self) -> float:
        return self.streams.shape[1] / self.rate_hz

    def combined(self) -> np.ndarray:
        return self.streams.sum(axis=0)


def _exact_samples(seconds, rate_hz, what):
    n = seconds * rate_hz
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"{what} of {seconds} s is not an integer number of samples at {rate_hz} Hz")
    return int(round(n))


def bpsk_modulate(seq: BipolarSequence | Sequence[int], cfg: ModulationConfig = ModulationConfig(),
                  code_index: int = 0) -> CodePattern:
    """Map each chip to ``cycles_per_symbol`` sine periods, inverted for -1 chips."""
    chips = seq.chips if isinstance(seq, BipolarSequence) else np.asarray(seq)
    spc = cfg.samples_per_cycle
    cycle = np.sin(2 * np.pi * np.arange(spc) / spc)
    symbol = np.tile(cycle, cfg.cycles_per_symbol)
    samples = np.kron(chips.astype(float), symbol)
    samples /= np.max(np.abs(samples))
    return CodePattern(samples, cfg.fs_tx, code_index)


def antialias_filter(rate_hz: float, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                     numtaps: int = DEFAULT_NUMTAPS) -> np.ndarray:
    """Linear-phase FIR low-pass used ahead of decimation (odd length, zero-phase when centred)."""
    if numtaps % 2 == 0:
        numtaps += 1
    return signal.firwin(numtaps, cutoff_hz, fs=rate_hz)


def decimate(p: CodePattern, factor: int, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
             numtaps: int = DEFAULT_NUMTAPS) -> CodePattern:
    """Low-pass and keep every ``factor``-th sample.

    The filter is applied centred (no group delay) and its output is kept on
    the input's support, so sample ``k`` of the result lines up with sample
    ``k * factor`` of the input.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return CodePattern(p.samples.copy(), p.rate_hz, p.code_index)
    h = antialias_filter(p.rate_hz, cutoff_hz, numtaps)
    half = (h.size - 1) // 2
    filtered = np.convolve(p.samples, h)[half:half + p.samples.size]
    return CodePattern(filtered[::factor], p.rate_hz / factor, p.code_index)


def receiver_pattern(seq: BipolarSequence, cfg: ModulationConfig, fs_rx: float,
                     code_index: int = 0, cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> CodePattern:
    """Reference pattern at the receiver rate, decimated from the transmit waveform."""
    tx = bpsk_modulate(seq, cfg, code_index)
    return decimate(tx, rate_factor(cfg.fs_tx, fs_rx), cutoff_hz)


def synthesize_pattern(seq: BipolarSequence, cfg: ModulationConfig, rate_hz: float,
                       code_index: int = 0) -> CodePattern:
    """BPSK pattern evaluated directly at ``rate_hz`` (no anti-alias filtering)."""
    chips = seq.chips if isinstance(seq, BipolarSequence) else np.asarray(seq)
    n = int(round(chips.size * cfg.samples_per_symbol * rate_hz / cfg.fs_tx))
    t = np.arange(n) / rate_hz
    chip_idx = np.minimum((t * cfg.carrier_hz / cfg.cycles_per_symbol).astype(int), chips.size - 1)
    samples = chips[chip_idx] * np.sin(2 * np.pi * cfg.carrier_hz * t)
    return CodePattern(samples / np.max(np.abs(samples)), rate_hz, code_index)


def rate_factor(rate_hz: float, fs_rx: float) -> int:
    ratio = rate_hz / fs_rx
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"rate {rate_hz} Hz is not an integer multiple of {fs_rx} Hz")
    return int(round(ratio))


def build_frame(patterns: Sequence[CodePattern], schedule: TdmaSchedule) -> TransmitFrame:
    """Place channel ``i``'s pattern at the start of its TDMA slot."""
    if len(patterns) != schedule.n_channels:
        raise ValueError(f"{len(patterns)} patterns for {schedule.n_channels} scheduled channels")
    rate = patterns[0].rate_hz
    if any(p.rate_hz != rate for p in patterns):
        raise ValueError("all patterns must share one sample rate")
    slot = schedule.slot_samples(rate)
    streams = np.zeros((len(patterns), slot * len(patterns)))
    offsets = []
    for i, p in enumerate(patterns):
        if len(p) > slot:
            raise ValueError(f"pattern {i} ({len(p)} samples) longer than slot ({slot} samples)")
        start = schedule.slot_of(i) * slot
        streams[i, start:start + len(p)] = p.samples
        offsets.append(start)
    streams.setflags(write=False)
    return TransmitFrame(streams, rate, tuple(patterns), tuple(offsets), schedule)
