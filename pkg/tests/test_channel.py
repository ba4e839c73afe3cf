import numpy as np
import pytest
from hypothesis import given, strategies as st

from ulps_mca.channel import (BeaconArray, ChannelRealization, MultipathTap, NoiseConfig, RoomModel,
                              add_reflector_echo, direct_path_taps, image_source_taps,
                              max_consecutive_spread, noise_sigma, render_received, required_samples,
                              square_array)
from ulps_mca.waveform import CodePattern, TdmaSchedule, build_frame

FS = 100_000.0


def test_direct_path_delay():
    arr = BeaconArray(np.array([[0.0, 0.0, 3.5]]))
    ch = direct_path_taps(arr, (0, 0, 1), 343.0)
    assert ch.los(0).delay_s == pytest.approx(2.5 / 343.0)
    assert ch.los(0).delay_s * 1e3 == pytest.approx(7.289, abs=1e-3)


def test_doubling_distance_halves_gain():
    arr = BeaconArray(np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]]))
    ch = direct_path_taps(arr, (0, 0, 1))
    assert ch.los(1).gain == pytest.approx(ch.los(0).gain / 2)


def test_square_array_layout():
    arr = square_array(0.7, 2.75)
    assert arr.L == 5
    assert np.allclose(arr.positions[4], [0, 0, 2.75])
    assert np.allclose(arr.centroid, [0, 0, 2.75])
    assert np.allclose(np.abs(arr.positions[:4, :2]), 0.35)


def test_coincident_beacons_rejected():
    with pytest.raises(ValueError, match="coincide"):
        BeaconArray(np.array([[0, 0, 1.0], [0, 0, 1.0]]))


def test_image_order_zero_is_direct(array):
    room = RoomModel()
    a = image_source_taps(room, array, (0.3, -0.2, 1.0), order=0)
    b = direct_path_taps(array, (0.3, -0.2, 1.0))
    assert a == b


def test_image_order_one_seven_taps(array):
    ch = image_source_taps(RoomModel(), array, (0, 0, 1), order=1)
    assert all(len(t) == 7 for t in ch.taps)


def test_floor_image_by_hand():
    # beacon at height 2, receiver at (1, 0, 1): floor image at (0, 0, -2)
    room = RoomModel(np.array([4.0, 4.0, 3.0]), np.full(6, 0.5))
    arr = BeaconArray(np.array([[0.0, 0.0, 2.0]]))
    ch = image_source_taps(room, arr, (1.0, 0.0, 1.0), c=343.0)
    d = np.sqrt(1 + 9)
    taps = {round(t.delay_s * 343.0, 9): t.gain for t in ch.taps[0]}
    assert taps[round(d, 9)] == pytest.approx(0.5 / d)


def test_absorbing_room_zero_gain_images(array):
    ch = image_source_taps(RoomModel(reflection_coeffs=np.zeros(6)), array, (0, 0, 1))
    for taps in ch.taps:
        los = min(taps, key=lambda t: t.delay_s)
        assert sum(t.gain != 0 for t in taps) == 1 and los.gain > 0


def test_image_rejects_outside_points(array):
    with pytest.raises(ValueError, match="outside"):
        image_source_taps(RoomModel(), array, (10, 0, 1))


def test_echo_ratio_and_delay(array):
    ch = add_reflector_echo(direct_path_taps(array, (0, 0, 1)), 0.8e-3, 1.5)
    for taps in ch.taps:
        los, echo = taps
        assert echo.gain == pytest.approx(1.5 * los.gain)
        assert (echo.delay_s - los.delay_s) * FS == pytest.approx(80.0)


def test_echo_zero_gain(array):
    base = direct_path_taps(array, (0, 0, 1))
    ch = add_reflector_echo(base, 1e-3, 0.0)
    for a, b in zip(base.taps, ch.taps):
        assert b[0] == a[0] and b[1].gain == 0.0


def test_echo_twice_gives_two_echoes(array):
    ch = add_reflector_echo(add_reflector_echo(direct_path_taps(array, (0, 0, 1)), 5e-4, 0.5), 9e-4, 0.7)
    for taps in ch.taps:
        assert len({t.delay_s for t in taps}) == 3


def test_echo_per_channel_delays(array):
    delays = [1e-4, 2e-4, 3e-4, 4e-4, 5e-4]
    ch = add_reflector_echo(direct_path_taps(array, (0, 0, 1)), delays, 1.0)
    for d, taps in zip(delays, ch.taps):
        assert taps[1].delay_s - taps[0].delay_s == pytest.approx(d)


def test_echo_rejects_nonpositive_delay(array):
    with pytest.raises(ValueError):
        add_reflector_echo(direct_path_taps(array, (0, 0, 1)), 0.0, 1.0)


def test_channel_dict_round_trip(array):
    ch = image_source_taps(RoomModel(), array, (0.2, 0.1, 1.2))
    assert ChannelRealization.from_dict(ch.to_dict()) == ch


def test_noise_config_exclusive():
    with pytest.raises(ValueError):
        NoiseConfig()
    with pytest.raises(ValueError):
        NoiseConfig(snr_db=10, sigma=1)


def test_single_tap_render_is_shifted_pattern():
    rng = np.random.default_rng(1)
    p = CodePattern(rng.standard_normal(50), FS)
    frame = build_frame([p], TdmaSchedule(order=(0,)))
    ch = ChannelRealization(((MultipathTap(37 / FS, 0.6),),))
    buf = render_received(frame, ch, NoiseConfig.noiseless(), FS, n_samples=2000, patterns=[p])
    expected = np.zeros(2000)
    expected[37:87] = 0.6 * p.samples
    assert np.array_equal(buf.samples, expected)


def test_capture_offset_shifts_buffer():
    p = CodePattern(np.arange(1.0, 11.0), FS)
    frame = build_frame([p], TdmaSchedule(order=(0,)))
    ch = ChannelRealization(((MultipathTap(5 / FS, 1.0),),))
    buf = render_received(frame, ch, NoiseConfig.noiseless(), FS, n_samples=100,
                          capture_offset_s=12 / FS, patterns=[p])
    assert np.array_equal(buf.samples[17:27], p.samples)
    assert buf.capture_offset_s == pytest.approx(12 / FS)


def test_noise_only_variance():
    p = CodePattern(np.ones(10), FS)
    frame = build_frame([p], TdmaSchedule(order=(0,)))
    ch = ChannelRealization(((MultipathTap(0.0, 0.0),),))
    buf = render_received(frame, ch, NoiseConfig(sigma=0.3), FS, seed=5, n_samples=10_000, patterns=[p])
    assert np.std(buf.samples) == pytest.approx(0.3, rel=0.05)


def test_snr_reference(default_frame, rx_patterns, array):
    ch = direct_path_taps(array, (0, 0, 1))
    sigma = noise_sigma(NoiseConfig(snr_db=20.0), ch, rx_patterns)
    strongest = max(ch.los(i).gain for i in range(5))
    power = strongest ** 2 * np.mean(rx_patterns[4].samples ** 2)
    assert sigma ** 2 == pytest.approx(power / 100, rel=1e-2)


def test_noise_is_seeded(default_frame, array):
    ch = direct_path_taps(array, (0, 0, 1))
    a = render_received(default_frame, ch, NoiseConfig(snr_db=10), FS, seed=3, n_samples=10_000)
    b = render_received(default_frame, ch, NoiseConfig(snr_db=10), FS, seed=3, n_samples=10_000)
    c = render_received(default_frame, ch, NoiseConfig(snr_db=10), FS, seed=4, n_samples=10_000)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_full_frame_buffer(default_frame, rx_patterns, array):
    ch = direct_path_taps(array, (0, 0, 1))
    buf = render_received(default_frame, ch, NoiseConfig.noiseless(), FS, n_samples=10_000,
                          patterns=rx_patterns)
    assert len(buf) == 10_000
    for i in range(5):
        lag = 2000 * i + int(np.rint(ch.los(i).delay_s * FS))
        seg = buf.samples[lag:lag + 1224]
        assert np.allclose(seg, ch.los(i).gain * rx_patterns[i].samples)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 300), st.floats(-2, 2)), min_size=1, max_size=6),
       st.lists(st.tuples(st.integers(0, 5), st.integers(0, 300), st.floats(-2, 2)), min_size=1, max_size=6))
def test_render_linearity(a, b):
    rng = np.random.default_rng(0)
    pats = [CodePattern(rng.standard_normal(40), FS, i) for i in range(2)]
    frame = build_frame(pats, TdmaSchedule(order=(0, 1)))

    def channel(spec):
        taps = [[], []]
        for k, lag, g in spec:
            taps[k % 2].append(MultipathTap(lag / FS, g))
        return ChannelRealization(tuple(tuple(t) for t in taps))

    def render(ch):
        return render_received(frame, ch, NoiseConfig.noiseless(), FS, n_samples=4400, patterns=pats).samples

    ab = [x for x in a] + [x for x in b]
    assert np.allclose(render(channel(ab)), render(channel(a)) + render(channel(b)), atol=1e-12)


def test_auto_length_and_short_buffer(default_frame, array):
    ch = add_reflector_echo(direct_path_taps(array, (0, 0, 1)), 1e-2, 1.0)
    need = required_samples(default_frame, ch, FS, 0.0)
    buf = render_received(default_frame, ch, NoiseConfig.noiseless(), FS)
    assert len(buf) == need > 10_000
    with pytest.raises(ValueError, match=f"echoes need {need}"):
        render_received(default_frame, ch, NoiseConfig.noiseless(), FS, n_samples=10_000)


def test_render_channel_count_mismatch(default_frame, array):
    ch = direct_path_taps(BeaconArray(array.positions[:3]), (0, 0, 1))
    with pytest.raises(ValueError, match="channels"):
        render_received(default_frame, ch, NoiseConfig.noiseless(), FS)


def test_max_consecutive_spread(array):
    pt = np.array([[0.3, 0.1, 1.0]])
    d = np.linalg.norm(array.positions - pt, axis=1)
    expected = np.max(np.abs(np.diff(d))) / 343.0 * FS
    assert max_consecutive_spread(array, pt, range(5)) == pytest.approx(expected)
