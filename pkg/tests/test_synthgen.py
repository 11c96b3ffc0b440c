import json
import math
from dataclasses import replace

import numpy as np
import pytest

from mcnoise.errors import UsageError
from mcnoise.models import CoefficientSet, sample_model
from mcnoise.nonlinearity import REFERENCE_NOISE_M1, analyze_noise
from mcnoise.synthgen import (SynthConfig, default_scenario_configs, draw_coefficients,
                              generate_scenario, generate_trial, replay_trial,
                              scenario_from_config, write_scenario)
from mcnoise.traces import Group, load_manifest
from mcnoise import rng


def test_noiseless_trial_is_exact_curve():
    cfg = SynthConfig(sample_noise_std=0.0)
    tr, truth = generate_trial(cfg, 0, Group.TX1)
    np.testing.assert_array_equal(tr.values,
                                  sample_model("m1", cfg.base_coeffs, cfg.grid).values)
    assert (truth["a"], truth["b"], truth["c"]) == (2.905, 1.3839e-4, 54.3405)
    assert tr.label == "Tx1_00" and tr.source.value == "synthetic"


def test_same_seed_same_trace_and_index_independence():
    cfg = SynthConfig(a_variance=0.0672, seed=11)
    a, _ = generate_trial(cfg, 5, Group.TX2)
    b, _ = generate_trial(cfg, 5, Group.TX2)
    np.testing.assert_array_equal(a.values, b.values)
    c, _ = generate_trial(cfg, 6, Group.TX2)
    d, _ = generate_trial(cfg, 5, Group.TX1)
    assert not np.array_equal(a.values, c.values)
    assert not np.array_equal(a.values, d.values)
    # changing the trial count must not change existing trials
    e, _ = generate_trial(replace(cfg, trials=40), 5, Group.TX2)
    np.testing.assert_array_equal(a.values, e.values)


def test_coefficient_draw_statistics():
    cfg = SynthConfig(base_coeffs=CoefficientSet(2.905, 1.4e-4, 55.0), a_variance=0.0672,
                      c_variance=4.0)
    n = 10_000
    draws = np.array([draw_coefficients(cfg, rng.stream(0, 1, i, rng.COEFFS))[0]
                      for i in range(n)])
    mean, var = draws.mean(axis=0), draws.var(axis=0, ddof=1)
    assert abs(mean[0] - 2.905) < 3 * math.sqrt(0.0672 / n)
    assert abs(mean[2] - 55.0) < 3 * math.sqrt(4.0 / n)
    # variance of the sample variance for Gaussian data is 2 s^4 / (n - 1)
    assert abs(var[0] - 0.0672) < 3 * 0.0672 * math.sqrt(2 / (n - 1))
    assert np.all(draws[:, 1] == 1.4e-4)


def test_redraws_keep_coefficients_positive():
    cfg = SynthConfig(base_coeffs=CoefficientSet(0.1, 1.4e-4, 55.0), a_variance=0.04)
    draws = [draw_coefficients(cfg, rng.stream(3, 1, i, rng.COEFFS)) for i in range(500)]
    assert all(d[0][0] > 0 for d in draws)
    assert sum(d[1].get("a", 0) for d in draws) > 0


@pytest.mark.parametrize("group", ["Tx1", "Tx2", "Tx12"])
def test_replay_bit_identical(group):
    tx1, tx2 = default_scenario_configs(seed=21)
    sc = generate_scenario(tx1, tx2)
    truth = json.loads(json.dumps(sc.truth))
    for k in (0, 7, 11):
        np.testing.assert_array_equal(replay_trial(truth, group, k), sc.groups()[group][k].values)


def test_config_mismatch_rejected():
    tx1, tx2 = default_scenario_configs()
    for change in ({"seed": 1}, {"trials": 3}, {"sample_noise_std": 0.1}):
        with pytest.raises(UsageError):
            generate_scenario(tx1, replace(tx2, **change))
    with pytest.raises(UsageError):
        SynthConfig(trials=0)
    with pytest.raises(UsageError):
        SynthConfig(seed=-1)
    with pytest.raises(UsageError):
        SynthConfig(model="h1")


def test_null_case_mean_within_two_standard_errors():
    hits, n_seeds = 0, 40
    for seed in range(n_seeds):
        tx1, tx2 = default_scenario_configs(seed=seed)
        tx1, tx2 = replace(tx1, nonlinearity=None), replace(tx2, nonlinearity=None)
        sc = generate_scenario(tx1, tx2)
        res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", 225.0, threads=1)
        hits += abs(res.stats.mu) < 2 * res.mean_standard_error
    assert hits >= 0.85 * n_seeds


def test_single_trial_scenario():
    tx1, tx2 = default_scenario_configs(seed=2, trials=1)
    sc = generate_scenario(tx1, tx2)
    res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", 225.0)
    assert res.n_samples == 1


def test_scenario_from_config_overrides():
    doc = {"seed": 4, "sample_noise_std": 0.0,
           "tx2": {"base_coeffs": {"a": 1.0, "b": 1.5e-4, "c": 50.0}}}
    tx1, tx2 = scenario_from_config(doc, trials=3)
    assert tx1.seed == tx2.seed == 4 and tx1.trials == 3
    assert tx2.base_coeffs.a == 1.0 and tx1.base_coeffs.a == 2.905
    assert tx1.nonlinearity == REFERENCE_NOISE_M1
    with pytest.raises(UsageError):
        scenario_from_config({"tx1": {"base_coeffs": {"a": 1.0}}})
    with pytest.raises(UsageError):
        scenario_from_config([1, 2])


def test_write_scenario(tmp_path):
    sc = generate_scenario(*default_scenario_configs(seed=1))
    paths = write_scenario(sc, tmp_path)
    assert len(list(tmp_path.glob("*.csv"))) == 36
    assert {p.name for p in tmp_path.glob("*.json")} == {"tx1.json", "tx2.json", "tx12.json",
                                                          "ground_truth.json"}
    back = load_manifest(paths["Tx12"])
    assert back.group is Group.TX12 and len(back) == 12
    np.testing.assert_array_equal(back[3].values, sc.tx12[3].values)
    truth = json.loads(paths["ground_truth"].read_text())
    assert truth["seed"] == 1 and len(truth["groups"]["Tx1"]) == 12
