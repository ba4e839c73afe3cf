import json

import numpy as np
import pytest

from ulps_mca.channel import max_consecutive_spread
from ulps_mca.scenario import (BUNDLED, Scenario, ScenarioError, Setup, derive_delta_samples,
                               load_scenario, scenario_from_dict, scenario_json)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    sc = load_scenario(name)
    assert sc.name == name
    setup = Setup(sc)
    assert setup.frame_samples == 10_000
    assert len(setup.rx_patterns) == 5 and len(setup.rx_patterns[0]) == 1224


def test_reflector_scenario_parameters():
    sc = load_scenario("uex_reflector")
    assert sc.reflector.gain_ratio == 1.5
    assert sc.reflector.delay_ms == 0.8
    assert sc.noise.snr_db == 20.0
    assert sc.mca.M == 3 and sc.mca.gamma == 0.1 and sc.mca.J == 32
    assert load_scenario("uex_noreflector").reflector is None
    assert load_scenario("box_room_images").room.image_order == 1


def test_round_trip_dict():
    sc = load_scenario("uex_reflector")
    assert scenario_from_dict(json.loads(scenario_json(sc))) == sc


def test_load_from_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(scenario_json(load_scenario("uex_noreflector").replace(name="mine")))
    assert load_scenario(path).name == "mine"


@pytest.mark.parametrize("patch, msg", [
    ({"bogus": 1}, "unknown key"),
    ({"mca": {"M": 3, "gama": 0.1}}, "unknown key"),
    ({"noise": {"snr_db": 20, "sigma": 1}}, "exactly one"),
    ({"mca": {"M": 0}}, "M and J"),
    ({"solver": {"height": "floating"}}, "height"),
    ({"capture_offset_ms": [2, 1]}, "capture_offset"),
    ({"codes": {"assign": [0, 1, 2]}}, "assignments"),
    ({"codes": {"degree": 8, "polynomial": 283}}, "period 51"),
    ({"schedule": {"slot_ms": 20, "order": [0, 0, 1, 2, 3]}}, "permutation"),
    ({"beacons": {"layout": "ring"}}, "layout"),
    ({"fs_rx": -5}, "positive"),
])
def test_invalid_scenarios(patch, msg):
    d = load_scenario("uex_noreflector").to_dict()
    d.update(patch)
    with pytest.raises(ScenarioError, match=msg):
        scenario_from_dict(d)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(bad)


def test_overrides():
    sc = load_scenario("uex_reflector").with_overrides(M=5, gamma=0.3, J=40, delta_ms=0.7)
    s = Setup(sc)
    assert (s.mca_config.M, s.mca_config.gamma, s.mca_config.J) == (5, 0.3, 40)
    assert s.delta_samples == 70


def test_derived_delta_covers_coverage():
    sc = Scenario()
    s = Setup(sc)
    assert sc.schedule.delta_ms is None
    rng = np.random.default_rng(0)
    x0, x1, y0, y1, z0, z1 = sc.coverage
    pts = rng.uniform([x0, y0, z0], [x1, y1, z1], (500, 3))
    assert max_consecutive_spread(s.array, pts, s.order) <= s.delta_samples
    assert s.delta_samples == derive_delta_samples(s.array, sc.coverage, s.order, 343.0, 1e5)


def test_known_height_solver_config():
    s = Setup(load_scenario("uex_noreflector"))
    assert s.solver_config().fixed_z == 1.0
    assert s.solver_config(1.004).fixed_z == 1.004
    assert Setup(load_scenario("uex_reflector")).solver_config(1.0).fixed_z is None


def test_explicit_beacons():
    d = Scenario().to_dict()
    d["beacons"] = {"layout": "explicit",
                    "positions": [[-1, -1, 2.7], [1, -1, 2.7], [1, 1, 2.7], [-1, 1, 2.7], [0, 0, 2.6]]}
    s = Setup(scenario_from_dict(d))
    assert np.allclose(s.array.positions[4], [0, 0, 2.6])
