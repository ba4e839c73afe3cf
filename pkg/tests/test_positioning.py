import numpy as np
import pytest
from hypothesis import given, strategies as st

from ulps_mca.channel import BeaconArray, direct_path_taps, square_array
from ulps_mca.mca import ToaResult
from ulps_mca.positioning import (SolverConfig, TdoaSet, sanity_bound, solve_position, toas_to_tdoas,
                                  true_tdoas)
from ulps_mca.waveform import TdmaSchedule

FS = 100_000.0
C = 343.0
SCHED = TdmaSchedule()
ARRAY = square_array()
coverage_points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.0, 2.0))


def exact_toas(pos, cap=0.0):
    """Fractional-sample ToAs for a receiver at ``pos``."""
    d = np.linalg.norm(ARRAY.positions - np.asarray(pos), axis=1)
    return [2000 * i + cap + d[i] / C * FS for i in range(5)]


def toa_result(values):
    return ToaResult(tuple(values), tuple((v,) if v is not None else () for v in values), "test")


def test_equidistant_gives_zero():
    # (0, 0, 1) is equidistant from the four corner beacons
    tdoas = toas_to_tdoas(toa_result(exact_toas((0, 0, 1))), SCHED, FS, C)
    assert np.allclose(tdoas.range_diffs[:4], 0.0, atol=1e-12)
    assert tdoas.reference == 0 and tdoas.n_valid == 4


@given(coverage_points)
def test_rendered_toas_within_one_sample(pos):
    ch = direct_path_taps(ARRAY, pos, C)
    toas = [2000 * i + int(np.rint(ch.los(i).delay_s * FS)) for i in range(5)]
    got = toas_to_tdoas(toa_result(toas), SCHED, FS, C)
    want = true_tdoas(ARRAY, pos)
    assert np.all(np.abs(got.range_diffs - want.range_diffs) <= C / FS)


@given(coverage_points, st.floats(-500, 500))
def test_offset_invariance(pos, shift):
    a = toas_to_tdoas(toa_result(exact_toas(pos)), SCHED, FS, C)
    b = toas_to_tdoas(toa_result(exact_toas(pos, shift)), SCHED, FS, C)
    assert np.allclose(a.range_diffs, b.range_diffs, atol=1e-9)


def test_absent_toa_flagged_and_reference_moves():
    vals = exact_toas((0.2, 0.1, 1.0))
    vals[0] = None
    t = toas_to_tdoas(toa_result(vals), SCHED, FS, C)
    assert t.reference == 1 and not t.valid[0] and np.isnan(t.range_diffs[0])
    assert t.channels() == [2, 3, 4]


def test_too_few_toas():
    vals = exact_toas((0.2, 0.1, 1.0))
    vals[0] = vals[1] = None
    with pytest.raises(ValueError, match="need at least 4"):
        toas_to_tdoas(toa_result(vals), SCHED, FS, C)
    assert toas_to_tdoas(toa_result(vals), SCHED, FS, C, min_valid=3).n_valid == 2


def test_sanity_bound_flags_outliers():
    vals = exact_toas((0.2, 0.1, 1.0))
    vals[3] += 3000
    bound = sanity_bound(ARRAY, (-1.5, 1.5, -1.5, 1.5, 0.5, 1.5))
    t = toas_to_tdoas(toa_result(vals), SCHED, FS, C, min_valid=4, bound=bound)
    assert not t.valid[3] and t.n_valid == 3
    assert bound == pytest.approx(np.hypot(0.7, 0.7) + np.sqrt(9 + 9 + 1))


def test_slot_order_is_used():
    sched = TdmaSchedule(order=(1, 0, 2, 3, 4))
    pos = (0.3, -0.2, 1.1)
    d = np.linalg.norm(ARRAY.positions - np.asarray(pos), axis=1)
    toas = [2000 * sched.slot_of(i) + d[i] / C * FS for i in range(5)]
    t = toas_to_tdoas(toa_result(toas), sched, FS, C)
    assert np.allclose(t.range_diffs, d - d[0])


@given(coverage_points)
def test_round_trip_exact(pos):
    fix = solve_position(true_tdoas(ARRAY, pos), ARRAY)
    assert fix.converged
    assert np.linalg.norm(np.array(fix.position) - pos) < 1e-6
    assert fix.residual_rms < 1e-9


@given(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)), st.floats(0.5, 1.5))
def test_fixed_height_round_trip(xy, z):
    pos = (xy[0], xy[1], z)
    t = true_tdoas(ARRAY, pos)
    valid = t.valid.copy()
    valid[4] = False  # three differences suffice with z known
    t3 = TdoaSet(0, np.where(valid, t.range_diffs, np.nan), valid)
    fix = solve_position(t3, ARRAY, SolverConfig(fixed_z=z))
    assert fix.converged and fix.position[2] == z
    assert np.linalg.norm(np.array(fix.position) - pos) < 1e-6


def test_symmetric_point_grid_start():
    fix = solve_position(true_tdoas(ARRAY, (0, 0, 1)), ARRAY, SolverConfig(initial_guess="grid"))
    assert fix.converged
    assert np.allclose(fix.position, (0, 0, 1), atol=1e-6)


def test_one_sample_perturbation_is_centimetric():
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(200):
        toas = np.array(exact_toas((0, 0, 1)))
        toas = np.rint(toas) + rng.choice([-1, 1], 5)
        fix = solve_position(toas_to_tdoas(toa_result(list(toas)), SCHED, FS, C), ARRAY,
                             SolverConfig(fixed_z=1.0))
        errs.append(np.linalg.norm(np.array(fix.position) - (0, 0, 1)))
    assert np.median(errs) < 0.03


def test_non_convergence_is_reported():
    fix = solve_position(true_tdoas(ARRAY, (1.2, -1.0, 0.4)), ARRAY,
                         SolverConfig(max_iterations=1, tolerance=1e-15))
    assert not fix.converged
    assert all(np.isfinite(fix.position))


def test_collinear_array_is_degenerate():
    arr = BeaconArray(np.array([[0, 0, 2.0], [1, 0, 2.0], [2, 0, 2.0], [3, 0, 2.0]]))
    with pytest.raises(np.linalg.LinAlgError):
        solve_position(true_tdoas(arr, (1.5, 0, 1.0)), arr, SolverConfig(initial_guess="centroid"))


def test_too_few_differences():
    t = true_tdoas(ARRAY, (0, 0, 1))
    valid = np.array([True, True, True, False, False])
    with pytest.raises(ValueError, match="cannot fix 3"):
        solve_position(TdoaSet(0, t.range_diffs, valid), ARRAY)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0)
    with pytest.raises(ValueError):
        SolverConfig(initial_guess="magic")
