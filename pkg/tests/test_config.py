"""Strict JSON config loading for every subcommand."""

import json

import numpy as np
import pytest

from spinsteer import (
    ConfigError,
    load_collapse_config,
    load_compare_config,
    load_run_config,
    load_sweep_config,
    load_tune_config,
)


def base_params(**overrides):
    raw = {"n_atoms": 10, "G": 1e-4, "A": 0.04, "eta": 1.0, "dt": 0.01,
           "t_final": 30.0, "seed": 7}
    raw.update(overrides)
    return raw


def test_run_config_full_document():
    doc = {
        "params": base_params(g=2.0, B=0.2),
        "engine": "sme",
        "law": {"beta_xz": -4.0, "xi_y": 0.3, "saturation": 2.0},
        "target": [0.0, 1.0, 0.0],
        "stride": 5,
        "feedback_delay_steps": 3,
        "initconds_literal_paper": True,
    }
    cfg = load_run_config(doc)
    assert cfg.params.n_atoms == 10
    assert cfg.params.g == 2.0
    assert cfg.engine == "sme"
    assert cfg.law.entry("beta_xz") == -4.0
    assert cfg.law.entry("xi_y") == 0.3
    assert cfg.law.saturation == 2.0
    np.testing.assert_array_equal(cfg.target.bloch, [0.0, 1.0, 0.0])
    assert cfg.stride == 5
    assert cfg.feedback_delay_steps == 3
    assert cfg.unnormalized_yz is True


def test_run_config_defaults():
    cfg = load_run_config({"params": base_params()})
    assert cfg.engine == "moment"
    assert cfg.law is None
    assert cfg.target is None
    assert cfg.stride == 1
    assert cfg.feedback_delay_steps == 0
    assert cfg.unnormalized_yz is False
    assert cfg.params.B == pytest.approx(0.2)


def test_missing_required_param_is_named():
    doc = {"params": base_params()}
    del doc["params"]["A"]
    with pytest.raises(ConfigError, match=r"missing field params\.A"):
        load_run_config(doc)


def test_missing_params_section():
    with pytest.raises(ConfigError, match="missing field params"):
        load_run_config({"engine": "moment"})


def test_unknown_fields_are_named():
    with pytest.raises(ConfigError, match="unknown field wobble"):
        load_run_config({"params": base_params(), "wobble": 1})
    with pytest.raises(ConfigError, match=r"unknown field params\.wobble"):
        load_run_config({"params": base_params(wobble=1)})


def test_type_errors_are_named():
    with pytest.raises(ConfigError, match=r"field params\.A: expected a number"):
        load_run_config({"params": base_params(A=True)})
    with pytest.raises(ConfigError, match=r"field params\.seed: expected an integer"):
        load_run_config({"params": base_params(seed=1.5)})
    with pytest.raises(ConfigError, match="field engine: must be one of"):
        load_run_config({"params": base_params(), "engine": "exact"})
    with pytest.raises(ConfigError, match="field stride: must be >= 1"):
        load_run_config({"params": base_params(), "stride": 0})


def test_physical_validation_propagates():
    with pytest.raises(ConfigError, match="eta"):
        load_run_config({"params": base_params(eta=0.0)})
    with pytest.raises(ConfigError, match="B\\^2"):
        load_run_config({"params": base_params(B=0.5)})
    # the same B is fine once the coupling is released
    cfg = load_run_config({"params": base_params(B=0.5), "decouple_B": True})
    assert cfg.params.B == 0.5


def test_law_entry_map_and_arrays_agree():
    entry_cfg = load_run_config({
        "params": base_params(),
        "law": {"beta_xz": -4.0, "xi_y": 0.3},
    })
    array_cfg = load_run_config({
        "params": base_params(),
        "law": {"xi": [0.0, 0.3, 0.0],
                "beta": [[0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]},
    })
    np.testing.assert_array_equal(entry_cfg.law.xi, array_cfg.law.xi)
    np.testing.assert_array_equal(entry_cfg.law.beta, array_cfg.law.beta)


def test_law_rejects_unknown_entries():
    with pytest.raises(ConfigError, match=r"unknown field law\.beta_qq"):
        load_run_config({"params": base_params(), "law": {"beta_qq": 1.0}})


def test_target_validation():
    with pytest.raises(ConfigError, match="3-element"):
        load_run_config({"params": base_params(), "target": [0.0, 1.0]})
    with pytest.raises(ConfigError, match="entries must be numbers"):
        load_run_config({"params": base_params(), "target": [0.0, "up", 0.0]})


def test_parse_error_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"params": {,}}')
    with pytest.raises(ConfigError, match="line 1, column 13"):
        load_run_config(path)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_run_config(tmp_path / "nope.json")


def test_metadata_document_unwraps_config():
    inner = {"params": base_params(), "engine": "moment", "stride": 2}
    doc = {"config": inner, "master_seed": 7, "tau0": 1e4,
           "versions": {"numpy": "x"}, "command": "simulate",
           "artifacts": ["trajectory.csv"], "report": {"k": 1}}
    cfg = load_run_config(doc)
    assert cfg.stride == 2
    doc["leftover"] = 1
    with pytest.raises(ConfigError, match="unknown field leftover"):
        load_run_config(doc)


def test_run_config_raw_round_trips():
    doc = {
        "params": base_params(),
        "engine": "moment",
        "law": {"beta_xz": -4.0, "saturation": 1.5},
        "target": [0.0, 1.0, 0.0],
        "stride": 10,
        "feedback_delay_steps": 2,
    }
    cfg = load_run_config(doc)
    again = load_run_config(cfg.raw())
    assert again.raw() == cfg.raw()


def test_sweep_config_loads_and_round_trips():
    doc = {
        "params": base_params(),
        "law": {"xi_y": 0.1},
        "sweep": {"entry": "beta_xz", "grid": [-8.0, 0.0, 8.0],
                  "repetitions": 4},
    }
    cfg = load_sweep_config(doc)
    assert cfg.spec.entry == "beta_xz"
    np.testing.assert_array_equal(cfg.spec.grid, [-8.0, 0.0, 8.0])
    assert cfg.spec.repetitions == 4
    assert cfg.spec.law_template.entry("xi_y") == 0.1
    again = load_sweep_config(cfg.raw())
    assert again.raw() == cfg.raw()


def test_sweep_config_validation():
    good = {"params": base_params(),
            "sweep": {"entry": "beta_xz", "grid": [1.0]}}
    with pytest.raises(ConfigError, match="missing field sweep"):
        load_sweep_config({"params": base_params()})
    bad = dict(good, sweep={"entry": "beta_xz", "grid": []})
    with pytest.raises(ConfigError, match=r"sweep\.grid: expected a nonempty"):
        load_sweep_config(bad)
    bad = dict(good, sweep={"entry": "beta_xz", "grid": [1.0, "x"]})
    with pytest.raises(ConfigError, match=r"sweep\.grid: entries must be numbers"):
        load_sweep_config(bad)
    bad = dict(good, target=[0.0, 1.0, 0.0])
    with pytest.raises(ConfigError, match="field target: not used by sweep"):
        load_sweep_config(bad)


def test_tune_config_loads_and_round_trips():
    doc = {
        "params": base_params(),
        "target": [0.0, 1.0, 0.0],
        "tune": {"bounds": {"beta_xz": [-2.0, 0.0]}, "budget": 9,
                 "method": "grid", "repetitions": 3},
    }
    cfg = load_tune_config(doc)
    assert cfg.spec.bounds == {"beta_xz": (-2.0, 0.0)}
    assert cfg.spec.budget == 9
    assert cfg.spec.method == "grid"
    again = load_tune_config(cfg.raw())
    assert again.raw() == cfg.raw()


def test_tune_config_validation():
    base = {"params": base_params(), "target": [0.0, 1.0, 0.0]}
    with pytest.raises(ConfigError, match="missing field tune"):
        load_tune_config(dict(base))
    with pytest.raises(ConfigError, match="missing field target"):
        load_tune_config({"params": base_params(),
                          "tune": {"bounds": {"beta_xz": [-2.0, 0.0]}}})
    doc = dict(base, tune={"bounds": {"beta_xz": [-2.0]}})
    with pytest.raises(ConfigError, match=r"tune\.bounds\.beta_xz: expected"):
        load_tune_config(doc)
    doc = dict(base, law={"beta_xz": -1.0},
               tune={"bounds": {"beta_xz": [-2.0, 0.0]}})
    with pytest.raises(ConfigError, match="field law: not used by tune"):
        load_tune_config(doc)


def test_compare_config_loads_and_round_trips():
    doc = {
        "params": base_params(),
        "law": {"beta_xz": -4.0},
        "compare": {"n_trajectories": 50, "horizon": 20.0},
    }
    cfg = load_compare_config(doc)
    assert cfg.n_trajectories == 50
    assert cfg.horizon == 20.0
    again = load_compare_config(cfg.raw())
    assert again.raw() == cfg.raw()


def test_compare_config_validation():
    base = {"params": base_params(), "compare": {"n_trajectories": 10}}
    doc = dict(base, engine="sme")
    with pytest.raises(ConfigError, match="compare runs drive both engines"):
        load_compare_config(doc)
    doc = dict(base, compare={"n_trajectories": 0})
    with pytest.raises(ConfigError, match=r"n_trajectories: must be >= 1"):
        load_compare_config(doc)
    with pytest.raises(ConfigError, match="missing field compare"):
        load_compare_config({"params": base_params()})


def test_collapse_config_initial_kinds():
    base = {"params": base_params(n_atoms=4),
            "collapse": {"n_trajectories": 10}}
    cfg = load_collapse_config(base)
    assert cfg.initial is None
    assert cfg.threshold == pytest.approx(0.99)

    doc = dict(base, collapse={"n_trajectories": 10,
                               "initial": {"kind": "dicke", "k": 2}})
    cfg = load_collapse_config(doc)
    np.testing.assert_allclose(np.abs(cfg.initial.amplitudes) ** 2,
                               [0, 0, 1, 0, 0], atol=1e-15)

    doc = dict(base, collapse={"n_trajectories": 10,
                               "initial": {"kind": "coherent",
                                           "polar_angle": np.pi / 2}})
    cfg = load_collapse_config(doc)
    assert np.isclose(np.sum(np.abs(cfg.initial.amplitudes) ** 2), 1.0)

    # raw amplitudes are normalized on load
    doc = dict(base, collapse={"n_trajectories": 10,
                               "initial": {"kind": "amplitudes",
                                           "re": [3.0, 0.0, 0.0, 0.0, 4.0]}})
    cfg = load_collapse_config(doc)
    np.testing.assert_allclose(np.abs(cfg.initial.amplitudes),
                               [0.6, 0, 0, 0, 0.8], atol=1e-15)


def test_collapse_config_validation():
    base = {"params": base_params(n_atoms=4)}
    doc = dict(base, collapse={"n_trajectories": 10,
                               "initial": {"kind": "squeezed"}})
    with pytest.raises(ConfigError, match="coherent, dicke, or amplitudes"):
        load_collapse_config(doc)
    doc = dict(base, collapse={"n_trajectories": 10,
                               "initial": {"kind": "amplitudes",
                                           "re": [0.0, 0.0]}})
    with pytest.raises(ConfigError, match="amplitudes are all zero"):
        load_collapse_config(doc)
    doc = dict(base, law={"beta_xz": 1.0}, collapse={"n_trajectories": 10})
    with pytest.raises(ConfigError, match="measurement-only"):
        load_collapse_config(doc)
    doc = dict(base, engine="sme", collapse={"n_trajectories": 10})
    with pytest.raises(ConfigError, match="exact filter"):
        load_collapse_config(doc)
    doc = dict(base, stride=10, collapse={"n_trajectories": 10})
    with pytest.raises(ConfigError, match="field stride: not used by collapse"):
        load_collapse_config(doc)


def test_collapse_config_raw_round_trips():
    doc = {
        "params": base_params(n_atoms=4),
        "collapse": {"n_trajectories": 25, "threshold": 0.95,
                     "initial": {"kind": "dicke", "k": 1}},
    }
    cfg = load_collapse_config(doc)
    again = load_collapse_config(cfg.raw())
    assert again.raw() == cfg.raw()


def test_file_and_dict_sources_agree(tmp_path):
    doc = {"params": base_params(), "engine": "moment", "stride": 5}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    assert load_run_config(path).raw() == load_run_config(doc).raw()
