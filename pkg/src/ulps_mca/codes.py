"""Maximal-length and small-set Kasami spreading codes.

Polynomials are given as integer bitmasks including both the leading
``x**degree`` term and the constant term, e.g. ``x^8 + x^4 + x^3 + x^2 + 1``
is ``0x11D``.  Binary output ``0`` maps to chip ``+1`` and ``1`` to ``-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_POLYNOMIALS = {
    2: 0b111,
    4: 0b10011,
    6: 0b1000011,
    8: 0x11D,
    10: 0x409,
    12: 0x1053,
    14: 0x4443,
    16: 0x1100B,
}


@dataclass(frozen=True, eq=False)
class BipolarSequence:
    chips: np.ndarray

    def __post_init__(self):
        chips = np.asarray(self.chips, dtype=np.int8)
        if chips.ndim != 1 or chips.size == 0:
            raise ValueError("chips must be a non-empty 1-D vector")
        if not np.all(np.abs(chips) == 1):
            raise ValueError("chips must be +1 or -1")
        chips.setflags(write=False)
        object.__setattr__(self, "chips", chips)

    @property
    def length(self) -> int:
        return int(self.chips.size)

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BipolarSequence):
            return NotImplemented
        return np.array_equal(self.chips, other.chips)

    def __hash__(self):
        return hash(self.chips.tobytes())


@dataclass(frozen=True)
class KasamiSet:
    degree: int
    polynomial: int
    sequences: tuple[BipolarSequence, ...] = field(repr=False)

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, k) -> BipolarSequence:
        return self.sequences[k]

    def beacon_codes(self, assignment=None) -> list[BipolarSequence]:
        """Codes for each beacon; default gives beacon ``i`` member ``i``."""
        if assignment is None:
            assignment = range(5)
        return [self.sequences[k] for k in assignment]


def _lfsr_bits(polynomial: int, degree: int, state: int, count: int) -> np.ndarray:
    # Fibonacci form: a[t + n] = sum_k c_k a[t + k] (mod 2), c_k = bit k of the mask.
    taps = polynomial & ((1 << degree) - 1)
    out = np.empty(count, dtype=np.uint8)
    for t in range(count):
        out[t] = state & 1
        fb = bin(state & taps).count("1") & 1
        state = (state >> 1) | (fb << (degree - 1))
    return out


def lfsr_period(polynomial: int, degree: int, initial_state: int = 1) -> int:
    """Number of steps until the register returns to ``initial_state``."""
    taps = polynomial & ((1 << degree) - 1)
    state = initial_state
    for period in range(1, 1 << degree):
        fb = bin(state & taps).count("1") & 1
        state = (state >> 1) | (fb << (degree - 1))
        if state == initial_state:
            return period
    return (1 << degree) - 1


def _check_polynomial(polynomial: int, degree: int) -> None:
    if not 2 <= degree <= 16:
        raise ValueError(f"degree must lie in [2, 16], got {degree}")
    if polynomial >> degree != 1:
        raise ValueError(f"polynomial {polynomial:#x} does not have degree {degree}")
    if not polynomial & 1:
        raise ValueError(f"polynomial {polynomial:#x} has no constant term")


def generate_m_sequence(polynomial: int | None = None, degree: int = 8,
                        initial_state: int = 1) -> BipolarSequence:
    """One full period of the LFSR output as +/-1 chips.

    Raises ``ValueError`` for a zero or oversized initial state, a degree
    outside [2, 16], or a polynomial whose period is shorter than
    ``2**degree - 1`` (i.e. not primitive).
    """
    if polynomial is None:
        polynomial = DEFAULT_POLYNOMIALS[degree] if degree in DEFAULT_POLYNOMIALS else 0
    _check_polynomial(polynomial, degree)
    if initial_state == 0:
        raise ValueError("initial_state must be nonzero")
    if initial_state >> degree:
        raise ValueError(f"initial_state {initial_state:#x} wider than {degree} bits")
    n = (1 << degree) - 1
    period = lfsr_period(polynomial, degree, initial_state)
    if period != n:
        raise ValueError(
            f"polynomial {polynomial:#x} is not primitive: LFSR period {period}, expected {n}")
    bits = _lfsr_bits(polynomial, degree, initial_state, n)
    return BipolarSequence(1 - 2 * bits.astype(np.int8))


def generate_kasami_small_set(polynomial: int | None = None, degree: int = 8) -> KasamiSet:
    """Small Kasami set of ``2**(degree/2)`` sequences of period ``2**degree - 1``.

    Member 0 is the m-sequence ``u`` itself; member ``k + 1`` is
    ``u XOR roll(v, k)`` where ``v`` is ``u`` decimated by ``2**(degree/2) + 1``.
    """
    if degree % 2:
        raise ValueError(f"small Kasami sets need an even degree, got {degree}")
    if polynomial is None:
        polynomial = DEFAULT_POLYNOMIALS.get(degree, 0)
    u = generate_m_sequence(polynomial, degree).chips
    n = u.size
    q = (1 << (degree // 2)) + 1
    v = u[(q * np.arange(n)) % n]
    members = [BipolarSequence(u)]
    for k in range((1 << (degree // 2)) - 1):
        # XOR of bits is a product of bipolar chips
        members.append(BipolarSequence(u * np.roll(v, -k)))
    return KasamiSet(degree, polynomial, tuple(members))


def periodic_correlation(a: BipolarSequence, b: BipolarSequence, shift: int) -> int:
    """``sum_t a[t] * b[(t + shift) mod N]``."""
    x, y = _pair(a, b)
    return int(np.dot(x.astype(np.int64), np.roll(y, -shift).astype(np.int64)))


def periodic_correlation_all(a: BipolarSequence, b: BipolarSequence) -> np.ndarray:
    """Periodic correlation at every shift ``0..N-1``."""
    x, y = _pair(a, b)
    n = x.size
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return y.astype(np.int64)[idx] @ x.astype(np.int64)


def _pair(a, b):
    x = a.chips if isinstance(a, BipolarSequence) else np.asarray(a)
    y = b.chips if isinstance(b, BipolarSequence) else np.asarray(b)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} != {y.size}")
    return x, y
