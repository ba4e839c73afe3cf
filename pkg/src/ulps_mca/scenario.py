"""Declarative scenario files (JSON) and their expansion into runtime objects."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import (BeaconArray, NoiseConfig, RoomModel, SPEED_OF_SOUND, max_consecutive_spread,
                      receiver_patterns, square_array)
from .codes import generate_kasami_small_set
from .mca import McaConfig
from .positioning import SolverConfig
from .waveform import ModulationConfig, TdmaSchedule, bpsk_modulate, build_frame

BUNDLED = ("uex_noreflector", "uex_reflector", "box_room_images")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class BeaconsSpec:
    layout: str = "square"
    side: float = 0.7
    height: float = 2.75
    center: tuple[float, float] = (0.0, 0.0)
    positions: tuple[tuple[float, float, float], ...] | None = None


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float] = (6.4, 3.5, 2.8)
    origin: tuple[float, float, float] | None = None
    reflection: float | tuple[float, ...] = 0.9
    image_order: int = 0


@dataclass(frozen=True)
class ReflectorSpec:
    """Artificial echo per channel: ``gain_ratio`` x LoS, ``delay_ms`` +/- ``spread_ms`` later."""

    delay_ms: float = 0.8
    spread_ms: float = 0.0
    gain_ratio: float = 1.5


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float | None = None
    sigma: float | None = None


@dataclass(frozen=True)
class CodesSpec:
    degree: int = 8
    polynomial: int | None = None
    assign: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ModulationSpec:
    fs_tx: float = 500_000.0
    samples_per_cycle: int = 12
    cycles_per_symbol: int = 2
    cutoff_hz: float = 50_000.0


@dataclass(frozen=True)
class ScheduleSpec:
    slot_ms: float = 20.0
    order: tuple[int, ...] | None = None
    delta_ms: float | None = None


@dataclass(frozen=True)
class McaSpec:
    M: int = 3
    gamma: float = 0.1
    J: int = 32
    epsilon_stop: float = 0.02


@dataclass(frozen=True)
class SolverSpec:
    height: str | float = "free"  # "free", "known" (true receiver height) or meters
    max_iterations: int = 50
    tolerance: float = 1e-10


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    description: str = ""
    speed_of_sound: float = SPEED_OF_SOUND
    fs_rx: float = 100_000.0
    buffer_samples: int | None = 10_000
    beacons: BeaconsSpec = field(default_factory=BeaconsSpec)
    room: RoomSpec = field(default_factory=RoomSpec)
    receiver: tuple[float, float, float] = (0.0, 0.0, 1.0)
    random_receiver: bool = False
    coverage: tuple[float, float, float, float, float, float] = (-1.5, 1.5, -1.5, 1.5, 0.5, 1.5)
    jitter_m: float = 0.0
    reflector: ReflectorSpec | None = None
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(snr_db=20.0))
    capture_offset_ms: tuple[float, float] = (0.0, 0.0)
    codes: CodesSpec = field(default_factory=CodesSpec)
    modulation: ModulationSpec = field(default_factory=ModulationSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    mca: McaSpec = field(default_factory=McaSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, M=None, gamma=None, J=None, delta_ms=None) -> "Scenario":
        mca = dataclasses.replace(self.mca, **{k: v for k, v in
                                               (("M", M), ("gamma", gamma), ("J", J)) if v is not None})
        sched = self.schedule if delta_ms is None else dataclasses.replace(self.schedule, delta_ms=delta_ms)
        return dataclasses.replace(self, mca=mca, schedule=sched)


_NESTED = {
    "beacons": BeaconsSpec, "room": RoomSpec, "reflector": ReflectorSpec, "noise": NoiseSpec,
    "codes": CodesSpec, "modulation": ModulationSpec, "schedule": ScheduleSpec, "mca": McaSpec,
    "solver": SolverSpec,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k in _NESTED and cls is Scenario:
            kwargs[k] = None if v is None else _build(_NESTED[k], v, f"{where}.{k}")
        else:
            kwargs[k] = _tupled(v)
    return cls(**kwargs)


def scenario_from_dict(data: dict) -> Scenario:
    sc = _build(Scenario, data, "scenario")
    validate(sc)
    return sc


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Read a scenario file, or a bundled scenario by name."""
    p = Path(name_or_path)
    if p.suffix != ".json" and str(name_or_path) in BUNDLED:
        text = resources.files("ulps_mca.scenarios").joinpath(f"{name_or_path}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {name_or_path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{name_or_path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def validate(sc: Scenario) -> None:
    if sc.fs_rx <= 0 or sc.speed_of_sound <= 0:
        raise ScenarioError("fs_rx and speed_of_sound must be positive")
    if sc.buffer_samples is not None and sc.buffer_samples <= 0:
        raise ScenarioError("buffer_samples must be positive")
    if len(sc.receiver) != 3 or len(sc.coverage) != 6:
        raise ScenarioError("receiver needs 3 coordinates and coverage 6 bounds")
    lo, hi = sc.capture_offset_ms
    if not 0 <= lo <= hi:
        raise ScenarioError("capture_offset_ms must be an ordered nonnegative range")
    if (sc.noise.snr_db is None) == (sc.noise.sigma is None):
        raise ScenarioError("noise: set exactly one of snr_db or sigma")
    h = sc.solver.height
    if not (h in ("free", "known") or isinstance(h, (int, float))):
        raise ScenarioError(f"solver.height must be 'free', 'known' or a number, got {h!r}")
    if sc.beacons.layout not in ("square", "explicit"):
        raise ScenarioError(f"unknown beacon layout {sc.beacons.layout!r}")
    if sc.beacons.layout == "explicit" and not sc.beacons.positions:
        raise ScenarioError("explicit beacon layout needs positions")
    # constructing the runtime objects runs the remaining checks
    try:
        setup = Setup(sc)
        setup.codes
        setup.schedule
        setup.mca_config
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


class Setup:
    """Runtime objects derived from a scenario, built lazily and cached."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    @cached_property
    def array(self) -> BeaconArray:
        b = self.scenario.beacons
        if b.layout == "explicit":
            return BeaconArray(np.array(b.positions, dtype=float))
        return square_array(b.side, b.height, b.center)

    @cached_property
    def room(self) -> RoomModel:
        r = self.scenario.room
        return RoomModel(np.array(r.dimensions), np.array(r.reflection, dtype=float),
                         None if r.origin is None else np.array(r.origin))

    @cached_property
    def modulation(self) -> ModulationConfig:
        m = self.scenario.modulation
        return ModulationConfig(m.fs_tx, m.fs_tx / m.samples_per_cycle, m.cycles_per_symbol)

    @cached_property
    def codes(self):
        c = self.scenario.codes
        ks = generate_kasami_small_set(c.polynomial, c.degree)
        if len(c.assign) != self.array.L:
            raise ValueError(f"{len(c.assign)} code assignments for {self.array.L} beacons")
        return ks.beacon_codes(c.assign)

    @cached_property
    def tx_patterns(self):
        return [bpsk_modulate(s, self.modulation, i) for i, s in enumerate(self.codes)]

    @cached_property
    def delta_samples(self) -> int:
        s = self.scenario.schedule
        if s.delta_ms is not None:
            return int(round(s.delta_ms * 1e-3 * self.scenario.fs_rx))
        return derive_delta_samples(self.array, self.scenario.coverage, self.order,
                                    self.scenario.speed_of_sound, self.scenario.fs_rx)

    @property
    def order(self) -> tuple[int, ...]:
        o = self.scenario.schedule.order
        return tuple(range(self.array.L)) if o is None else tuple(o)

    @cached_property
    def schedule(self) -> TdmaSchedule:
        s = self.scenario.schedule
        return TdmaSchedule(s.slot_ms * 1e-3, self.order, self.delta_samples / self.scenario.fs_rx)

    @cached_property
    def frame(self):
        return build_frame(self.tx_patterns, self.schedule)

    @cached_property
    def rx_patterns(self):
        return receiver_patterns(self.frame, self.scenario.fs_rx, self.scenario.modulation.cutoff_hz)

    @cached_property
    def noise(self) -> NoiseConfig:
        n = self.scenario.noise
        return NoiseConfig(n.snr_db, n.sigma)

    @cached_property
    def mca_config(self) -> McaConfig:
        m = self.scenario.mca
        return McaConfig(m.M, m.gamma, m.J, self.delta_samples, m.epsilon_stop)

    def solver_config(self, truth_z: float | None = None) -> SolverConfig:
        s = self.scenario.solver
        if s.height == "free":
            fixed = None
        elif s.height == "known":
            fixed = float(self.scenario.receiver[2] if truth_z is None else truth_z)
        else:
            fixed = float(s.height)
        x0, x1, y0, y1, z0, z1 = self.scenario.coverage
        return SolverConfig(s.max_iterations, s.tolerance, "centroid", fixed,
                            coverage=(x0, x1, y0, y1, z0, z1))

    @property
    def frame_samples(self) -> int:
        return self.schedule.slot_samples(self.scenario.fs_rx) * self.array.L


def derive_delta_samples(array: BeaconArray, coverage, order, c: float, fs_rx: float,
                         step: float = 0.1, margin: int = 5) -> int:
    """Window half-width covering every consecutive-slot ToA difference over the coverage box."""
    x0, x1, y0, y1, z0, z1 = coverage
    g = np.stack(np.meshgrid(np.arange(x0, x1 + step / 2, step), np.arange(y0, y1 + step / 2, step),
                             np.arange(z0, z1 + step / 2, step), indexing="ij"), -1).reshape(-1, 3)
    return int(np.ceil(max_consecutive_spread(array, g, order, c, fs_rx))) + margin


def scenario_json(sc: Scenario) -> str:
    return json.dumps(sc.to_dict(), indent=2, sort_keys=True)
