import numpy as np
import pytest
from hypothesis import settings

from ulps_mca.channel import square_array
from ulps_mca.codes import generate_kasami_small_set
from ulps_mca.waveform import ModulationConfig, TdmaSchedule, build_frame, bpsk_modulate
from ulps_mca.channel import receiver_patterns

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# lines reported by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def kasami8():
    return generate_kasami_small_set()


@pytest.fixture(scope="session")
def default_frame(kasami8):
    cfg = ModulationConfig()
    pats = [bpsk_modulate(s, cfg, i) for i, s in enumerate(kasami8.beacon_codes())]
    return build_frame(pats, TdmaSchedule())


@pytest.fixture(scope="session")
def rx_patterns(default_frame):
    return receiver_patterns(default_frame, 100_000.0)


@pytest.fixture(scope="session")
def array():
    return square_array()


def place(patterns, taps, n=10_000, slot=2000, order=None):
    """Buffer holding ``gain * pattern_i`` at ``slot_i * slot + lag`` for each ``(i, lag, gain)``."""
    order = list(range(len(patterns))) if order is None else list(order)
    out = np.zeros(n)
    for i, lag, gain in taps:
        p = patterns[i].samples
        start = order.index(i) * slot + lag
        out[start:start + p.size] += gain * p
    return out
