"""Acoustic propagation from the beacon array to a receiver.

Channels are lists of (delay, gain) taps: a direct path with 1/d spreading,
optional first-order wall images, and optional artificial reflector echoes.
``render_received`` turns a transmit frame plus taps into a receiver buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .waveform import CodePattern, TransmitFrame, decimate, rate_factor, DEFAULT_CUTOFF_HZ

SPEED_OF_SOUND = 343.0

# surface order for reflection coefficients
SURFACES = ("x_min", "x_max", "y_min", "y_max", "floor", "ceiling")


@dataclass(frozen=True, eq=False)
class BeaconArray:
    positions: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise ValueError("positions must be an (L, 3) array")
        for i in range(len(p)):
            for j in range(i + 1, len(p)):
                if np.allclose(p[i], p[j]):
                    raise ValueError(f"beacons {i} and {j} coincide")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @property
    def L(self) -> int:
        return int(self.positions.shape[0])

    def __len__(self):
        return self.L

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def square_array(side: float = 0.7, height: float = 2.75,
                 center: Sequence[float] = (0.0, 0.0)) -> BeaconArray:
    """Four beacons on the corners of a square plus one at its centre.

    Corners are listed counter-clockwise from (-x, -y); the centre beacon is last.
    """
    h = side / 2
    cx, cy = center
    pts = [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h), (cx, cy)]
    return BeaconArray(np.array([(x, y, height) for x, y in pts]))


@dataclass(frozen=True, eq=False)
class RoomModel:
    """Box room spanning ``origin`` to ``origin + dimensions``."""

    dimensions: np.ndarray = field(default_factory=lambda: np.array([6.4, 3.5, 2.8]))
    reflection_coeffs: np.ndarray = field(default_factory=lambda: np.full(6, 0.9))
    origin: np.ndarray | None = None

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        coeffs = np.broadcast_to(np.asarray(self.reflection_coeffs, dtype=float), (6,)).copy()
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError("room dimensions must be three positive lengths")
        if np.any(coeffs < 0) or np.any(coeffs > 1):
            raise ValueError("reflection coefficients must lie in [0, 1]")
        origin = np.array([-dims[0] / 2, -dims[1] / 2, 0.0]) if self.origin is None \
            else np.asarray(self.origin, dtype=float)
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "reflection_coeffs", coeffs)
        object.__setattr__(self, "origin", origin)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.dimensions

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p <= self.upper))


@dataclass(frozen=True)
class MultipathTap:
    delay_s: float
    gain: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("tap delay must be nonnegative")


@dataclass(frozen=True)
class ChannelRealization:
    taps: tuple[tuple[MultipathTap, ...], ...]
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        taps = tuple(tuple(sorted(ch, key=lambda t: t.delay_s)) for ch in self.taps)
        object.__setattr__(self, "taps", taps)

    @property
    def L(self) -> int:
        return len(self.taps)

    def los(self, channel: int) -> MultipathTap:
        return self.taps[channel][0]

    def to_dict(self) -> dict:
        return {
            "speed_of_sound": self.speed_of_sound,
            "channels": [[{"delay_s": t.delay_s, "gain": t.gain} for t in ch] for ch in self.taps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelRealization":
        taps = tuple(tuple(MultipathTap(float(t["delay_s"]), float(t["gain"])) for t in ch)
                     for ch in d["channels"])
        return cls(taps, float(d.get("speed_of_sound", SPEED_OF_SOUND)))


@dataclass(frozen=True)
class NoiseConfig:
    """White Gaussian noise level: exactly one of ``snr_db`` or ``sigma``.

    ``snr_db`` is referenced to the power of the strongest channel's LoS
    component over its pattern duration.
    """

    snr_db: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if (self.snr_db is None) == (self.sigma is None):
            raise ValueError("set exactly one of snr_db or sigma")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(sigma=0.0)


@dataclass(frozen=True, eq=False)
class ReceivedBuffer:
    samples: np.ndarray
    rate_hz: float
    capture_offset_s: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("buffer must be 1-D")
        if not np.all(np.isfinite(s)):
            raise ValueError("buffer contains non-finite samples")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return int(self.samples.size)


def direct_path_taps(array: BeaconArray, receiver, c: float = SPEED_OF_SOUND,
                     ref_gain: float = 1.0) -> ChannelRealization:
    """One LoS tap per beacon: delay ``d / c``, gain ``ref_gain / d``."""
    rx = np.asarray(receiver, dtype=float)
    d = np.linalg.norm(array.positions - rx, axis=1)
    if np.any(d <= 0):
        raise ValueError("receiver coincides with a beacon")
    return ChannelRealization(tuple((MultipathTap(float(di / c), float(ref_gain / di)),) for di in d), c)


def image_source_taps(room: RoomModel, array: BeaconArray, receiver, c: float = SPEED_OF_SOUND,
                      order: int = 1, ref_gain: float = 1.0) -> ChannelRealization:
    """Direct path plus, for ``order=1``, one mirrored-source tap per room surface."""
    if order not in (0, 1):
        raise ValueError("only image orders 0 and 1 are supported")
    rx = np.asarray(receiver, dtype=float)
    if not room.contains(rx):
        raise ValueError(f"receiver {rx.tolist()} outside the room")
    for i, b in enumerate(array.positions):
        if not room.contains(b):
            raise ValueError(f"beacon {i} at {b.tolist()} outside the room")
    direct = direct_path_taps(array, rx, c, ref_gain)
    if order == 0:
        return direct
    lo, hi = room.origin, room.upper
    channels = []
    for b, los in zip(array.positions, direct.taps):
        taps = list(los)
        for k, coeff in enumerate(room.reflection_coeffs):
            axis, side = divmod(k, 2)
            wall = hi[axis] if side else lo[axis]
            img = b.copy()
            img[axis] = 2 * wall - b[axis]
            d = float(np.linalg.norm(img - rx))
            taps.append(MultipathTap(d / c, float(coeff * ref_gain / d)))
        channels.append(tuple(taps))
    return ChannelRealization(tuple(channels), c)


def add_reflector_echo(ch: ChannelRealization, extra_delay_s, gain_ratio: float) -> ChannelRealization:
    """Append an echo after each channel's LoS tap.

    ``extra_delay_s`` is a scalar or one value per channel.  ``gain_ratio``
    scales the LoS gain and may exceed 1.
    """
    delays = np.broadcast_to(np.asarray(extra_delay_s, dtype=float), (ch.L,))
    if np.any(delays <= 0):
        raise ValueError("extra_delay_s must be positive")
    channels = []
    for i, taps in enumerate(ch.taps):
        if not taps:
            raise ValueError(f"channel {i} has no taps")
        los = taps[0]
        channels.append(taps + (MultipathTap(los.delay_s + float(delays[i]), gain_ratio * los.gain),))
    return ChannelRealization(tuple(channels), ch.speed_of_sound)


def receiver_patterns(frame: TransmitFrame, fs_rx: float,
                      cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> list[CodePattern]:
    """The frame's patterns as the receiver samples them."""
    factor = rate_factor(frame.rate_hz, fs_rx)
    return [decimate(p, factor, cutoff_hz) for p in frame.patterns]


def required_samples(frame: TransmitFrame, ch: ChannelRealization, fs_rx: float,
                     capture_offset_s: float = 0.0) -> int:
    """Shortest buffer that holds every delayed copy of every pattern."""
    factor = rate_factor(frame.rate_hz, fs_rx)
    cap = int(np.rint(capture_offset_s * fs_rx))
    need = 0
    for i, taps in enumerate(ch.taps):
        plen = -(-len(frame.patterns[i]) // factor)
        for t in taps:
            need = max(need, frame.offsets[i] // factor + cap + int(np.rint(t.delay_s * fs_rx)) + plen)
    return need


def render_received(frame: TransmitFrame, ch: ChannelRealization, noise: NoiseConfig,
                    fs_rx: float = 100_000.0, seed=None, n_samples: int | None = None,
                    capture_offset_s: float = 0.0, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                    patterns: Sequence[CodePattern] | None = None) -> ReceivedBuffer:
    """Sum of every channel's emission through its taps, plus AWGN.

    Tap delays and the capture offset are rounded to whole receiver samples.
    ``capture_offset_s`` is how long before the frame start the receiver began
    recording.  ``n_samples`` defaults to the shortest buffer that holds all
    echoes; a shorter explicit length raises ``ValueError``.
    ``patterns`` may pass precomputed receiver-rate patterns.
    """
    if ch.L != frame.n_channels:
        raise ValueError(f"{ch.L} channels for a {frame.n_channels}-channel frame")
    factor = rate_factor(frame.rate_hz, fs_rx)
    for off in frame.offsets:
        if off % factor:
            raise ValueError("slot offsets must fall on receiver samples")
    rx_patterns = list(patterns) if patterns is not None else receiver_patterns(frame, fs_rx, cutoff_hz)
    need = required_samples(frame, ch, fs_rx, capture_offset_s)
    if n_samples is None:
        n_samples = max(need, len(frame) // factor)
    elif n_samples < need:
        raise ValueError(f"buffer of {n_samples} samples too short; echoes need {need}")
    cap = int(np.rint(capture_offset_s * fs_rx))
    out = np.zeros(n_samples)
    for i, taps in enumerate(ch.taps):
        p = rx_patterns[i].samples
        base = frame.offsets[i] // factor + cap
        for t in taps:
            start = base + int(np.rint(t.delay_s * fs_rx))
            out[start:start + p.size] += t.gain * p
    sigma = noise_sigma(noise, ch, rx_patterns)
    if sigma > 0:
        out += sigma * np.random.default_rng(seed).standard_normal(n_samples)
    return ReceivedBuffer(out, fs_rx, cap / fs_rx)


def noise_sigma(noise: NoiseConfig, ch: ChannelRealization, rx_patterns: Sequence[CodePattern]) -> float:
    if noise.sigma is not None:
        return float(noise.sigma)
    power = max(ch.los(i).gain ** 2 * np.mean(rx_patterns[i].samples ** 2)
                for i in range(ch.L) if ch.taps[i])
    return float(np.sqrt(power / 10 ** (noise.snr_db / 10)))


def max_consecutive_spread(array: BeaconArray, points, order: Sequence[int], c: float = SPEED_OF_SOUND,
                           fs_rx: float = 100_000.0) -> float:
    """Largest |d(next slot) - d(this slot)| / c over ``points``, in receiver samples."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.linalg.norm(pts[:, None, :] - array.positions[None, :, :], axis=2)
    d = d[:, list(order)]
    if d.shape[1] < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(d, axis=1))) / c * fs_rx)
