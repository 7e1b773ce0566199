import math

import pytest

import cardioem


def tiny_ep():
    return {
        "mode": "ep",
        "geometry": {"extent": [0.004, 0.004], "h": 5e-4},
        "protocol": {
            "t_end": 0.02,
            "stimuli": [{"center": [0, 0, 0], "radius": 1e-3, "amplitude": 17000, "duration": 3e-3, "onset": 0}],
        },
        "outputs": {"probes": [[0.001, 0.002, 0], [0.003, 0.002, 0]]},
    }


def test_default_config_round_trip():
    d = cardioem.default_config()
    assert d["mechanics"]["dt"] == 5e-4
    assert cardioem.normalize_config(d) == d


def test_unknown_key_names_the_path():
    with pytest.raises(cardioem.ConfigError, match=r"ep\.dtt"):
        cardioem.Simulation({"ep": {"dtt": 1e-5}})


def test_ep_run_activates_probes():
    sim = cardioem.Simulation(tiny_ep())
    sim.advance_to(0.02)
    assert sim.macro_steps == 40
    p = sim.probe_traces()
    assert p.shape[1] == 5
    assert p[:, 1].max() > 0.0 and p[:, 3].max() > 0.0
    assert sim.potential().shape == (81,)


def test_zero_d_conserves_volume():
    sim = cardioem.Simulation({"mode": "0d"})
    v0 = sim.total_blood_volume
    sim.step(1600)
    assert math.isclose(sim.time, 0.8, rel_tol=1e-12)
    assert sim.circulation["V_LV"] > 0.0
    assert abs(sim.total_blood_volume - v0) < 1e-3 * v0


def test_run_directory_and_postprocess(tmp_path):
    sim = cardioem.Simulation(tiny_ep())
    sim.open_outputs(str(tmp_path))
    sim.run()
    m = cardioem.postprocess_run(str(tmp_path))
    assert m["probe_0.activations"] == "1"
    assert (tmp_path / "metrics.txt").exists()
