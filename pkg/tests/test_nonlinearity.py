import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcnoise.errors import AlignmentError, DomainError, NumericalFailure
from mcnoise.fitting import FitOptions, levenberg_marquardt
from mcnoise.models import CoefficientSet, sample_model
from mcnoise.nonlinearity import (REFERENCE_NOISE_M1, REFERENCE_NOISE_M2, NoiseStats, analyze_noise,
                                  build_noise_cube, draw_amplitude, fit_gaussian, histogram,
                                  predicted_tx12_mean, raw_sum, refit_amplitudes,
                                  sample_noise_process, superposition_residual, synthesize_all,
                                  synthesize_h12, validate_prediction)
from mcnoise.synthgen import SynthConfig, generate_scenario
from mcnoise.traces import TimeGrid, average_traces

GRID = TimeGrid.default()
B, C, D = 1.4306e-4, 57.5018, 225.0


def curve(a, b=B, c=C, kind="m1", grid=GRID, label="x"):
    return sample_model(kind, CoefficientSet(a, b, c, D), grid, label=label)


def test_superposition_residual():
    h1, h2 = curve(2.0), curve(1.0)
    h12 = h1.with_values(h1.values + h2.values)
    np.testing.assert_allclose(superposition_residual(h12, h1, h2).values, 0, atol=1e-15)
    zero = h1.with_values(np.zeros(len(h1)))
    np.testing.assert_array_equal(superposition_residual(h12, zero, zero).values, h12.values)
    with pytest.raises(AlignmentError):
        superposition_residual(h12, h1, curve(1.0, grid=TimeGrid(0.05, 0.05, 50)))


def test_superposition_of_group_means_recovers_injected_waveform():
    stats = replace(REFERENCE_NOISE_M1, sigma2=0.0)
    tx1 = SynthConfig(base_coeffs=CoefficientSet(2.905, B, C), sample_noise_std=0.02, seed=3)
    tx2 = replace(tx1, base_coeffs=CoefficientSet(1.9815, B, C))
    sc = generate_scenario(tx1, tx2, stats)
    n = superposition_residual(average_traces(sc.tx12), average_traces(sc.tx1),
                               average_traces(sc.tx2))
    injected = stats.mu * stats.waveform(n.times)
    # three group means of 12 trials each with 0.02 V sample noise
    band = 4 * 0.02 * math.sqrt(3 / 12)
    assert np.max(np.abs(n.values - injected)) < band


def test_refit_amplitudes_projection():
    amps = refit_amplitudes([curve(3.7), curve(0.0)], "m1", B, C, D)
    assert amps[0] == pytest.approx(3.7, rel=1e-14)
    assert amps[1] == 0.0


def test_refit_matches_lm_with_only_amplitude_free():
    rng = np.random.default_rng(8)
    tr = curve(2.5, b=1.5e-4, c=55.0)
    tr = tr.with_values(tr.values + rng.normal(0, 0.05, len(tr)))
    closed = refit_amplitudes([tr], "m1", B, C, D)[0]
    opts = FitOptions(initial_guess=(1.0, B, C), free=(True, False, False))
    lm = levenberg_marquardt("m1", tr, D, opts).coeffs
    assert lm.b == B and lm.c == C
    assert lm.a == pytest.approx(closed, abs=1e-10)


def test_refit_degenerate_waveform():
    with pytest.raises(NumericalFailure):
        refit_amplitudes([curve(1.0)], "m1", 0.1, 1.0, D)
    with pytest.raises(DomainError):
        refit_amplitudes([curve(1.0)], "m1", -1e-4, C, D)


def test_cube_shape_and_values():
    cube = build_noise_cube(np.arange(12.0), np.arange(12.0), np.arange(12.0))
    assert cube.size == 1728 and cube.samples.shape == (12, 12, 12)
    one = build_noise_cube([1.0], [1.0], [2.0])
    assert one.size == 1 and one.flat()[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12),
       st.lists(st.floats(-20, 20), min_size=1, max_size=12),
       st.lists(st.floats(-20, 20), min_size=1, max_size=12))
def test_cube_identity(a1, a2, a12):
    cube = build_noise_cube(a1, a2, a12)
    i, j, k = len(a1) - 1, len(a2) // 2, 0
    assert cube.samples[i, j, k] == a12[k] - a1[i] - a2[j]
    expect = np.mean(a12) - np.mean(a1) - np.mean(a2)
    assert cube.samples.mean() == pytest.approx(expect, abs=1e-12)


def test_fit_gaussian():
    assert fit_gaussian([-1.0, 1.0]) == (0.0, 2.0)
    with pytest.raises(DomainError):
        fit_gaussian([1.0])


def test_reference_noise_fixtures():
    assert (REFERENCE_NOISE_M1.mu, REFERENCE_NOISE_M1.sigma2) == (-0.7356, 0.5214)
    assert (REFERENCE_NOISE_M2.mu, REFERENCE_NOISE_M2.sigma2) == (-3.9811, 14.9589)
    assert NoiseStats.from_dict(REFERENCE_NOISE_M2.to_dict()) == REFERENCE_NOISE_M2
    with pytest.raises(DomainError):
        NoiseStats(0.0, -1.0)


def test_noise_process_deterministic_and_degenerate():
    fixed = replace(REFERENCE_NOISE_M1, sigma2=0.0)
    tr = sample_noise_process(fixed, GRID, 0)
    np.testing.assert_allclose(tr.values, fixed.mu * fixed.waveform(GRID.times), rtol=1e-15)
    a = sample_noise_process(REFERENCE_NOISE_M1, GRID, 17)
    b = sample_noise_process(REFERENCE_NOISE_M1, GRID, 17)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_noise_process(REFERENCE_NOISE_M1, GRID, 18).values)


def test_noise_process_monte_carlo_mean():
    n = 100_000
    stats = REFERENCE_NOISE_M1
    t = 3.0
    g = float(stats.waveform(t))
    draws = np.array([draw_amplitude(stats, 5, i) for i in range(n)])
    mean_value = float(np.mean(draws * g))
    assert abs(mean_value - stats.mu * g) < 3 * math.sqrt(stats.sigma2 / n) * g


def test_expected_noise_is_nonstationary():
    for stats in (REFERENCE_NOISE_M1, REFERENCE_NOISE_M2):
        w = np.abs(stats.mu * stats.waveform(GRID.times))
        assert w.max() / w.min() > 10


def test_synthesize():
    h1s = [curve(2.9 + 0.01 * i, label=f"a{i}") for i in range(12)]
    h2s = [curve(2.0 - 0.01 * j, label=f"b{j}") for j in range(12)]
    zero = h1s[0].with_values(np.zeros(len(GRID.times)))
    np.testing.assert_array_equal(synthesize_h12(h1s[0], h2s[0], zero).values,
                                  h1s[0].values + h2s[0].values)
    out = synthesize_all(h1s, h2s, REFERENCE_NOISE_M1, seed=1)
    assert len(out) == 144
    draws = [draw_amplitude(REFERENCE_NOISE_M1, 1, i, j) for i in range(12) for j in range(12)]
    expect = (average_traces(h1s).values + average_traces(h2s).values
              + np.mean(draws) * REFERENCE_NOISE_M1.waveform(GRID.times))
    np.testing.assert_allclose(average_traces(out).values, expect, rtol=1e-12, atol=1e-14)
    clamped = synthesize_all(h1s, h2s, replace(REFERENCE_NOISE_M1, mu=-50.0), seed=1, clamp=True)
    assert min(tr.values.min() for tr in clamped) >= 0


def test_noise_model_consistency_monte_carlo():
    # E[h1 + h2 + N g] = h1 + h2 + mu g, checked with 10^4 synthesized traces.
    h1, h2 = curve(2.905), curve(1.9815)
    stats = REFERENCE_NOISE_M1
    n = 10_000
    g = stats.waveform(GRID.times)
    total = np.zeros(len(g))
    for k in range(n):
        total += synthesize_h12(h1, h2, sample_noise_process(stats, GRID, 99, k)).values
    mean = total / n
    band = 3 * math.sqrt(stats.sigma2 / n) * g
    assert np.all(np.abs(mean - (h1.values + h2.values + stats.mu * g)) <= band + 1e-12)


def test_validate_prediction():
    h = curve(3.0)
    rep = validate_prediction(h, h, curve(2.0))
    assert rep.rmse == 0 and rep.peak_time_offset == 0 and rep.peak_value_rel_error == 0
    assert rep.improves_on_raw_sum
    with pytest.raises(AlignmentError):
        validate_prediction(h, curve(3.0, grid=TimeGrid(0.05, 0.05, 10)))


def test_raw_sum_gap_is_mean_noise_waveform():
    stats = replace(REFERENCE_NOISE_M1, sigma2=0.3)
    tx1 = SynthConfig(base_coeffs=CoefficientSet(2.905, B, C), sample_noise_std=0.0, seed=4)
    tx2 = replace(tx1, base_coeffs=CoefficientSet(1.9815, B, C))
    sc = generate_scenario(tx1, tx2, stats)
    n_bar = np.mean([e["noise_amplitude"] for e in sc.truth["groups"]["Tx12"]])
    gap = np.abs(raw_sum(sc.tx1, sc.tx2).values - average_traces(sc.tx12).values)
    np.testing.assert_allclose(gap, np.abs(n_bar * stats.waveform(sc.tx1[0].times)),
                               rtol=1e-9, atol=1e-13)


def _scenario(seed, stats, trials=12, noise=0.02, jitter=0.0):
    tx1 = SynthConfig(base_coeffs=CoefficientSet(2.905, B, C), a_variance=jitter,
                      sample_noise_std=noise, seed=seed, trials=trials)
    tx2 = replace(tx1, base_coeffs=CoefficientSet(1.9815, B, C))
    return generate_scenario(tx1, tx2, stats)


def test_shared_coefficient_premise_on_common_shape():
    sc = _scenario(0, replace(REFERENCE_NOISE_M1, sigma2=0.0), noise=0.0)
    res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", D, threads=1)
    assert res.coefficient_spread["b"] < 1e-6
    assert res.coefficient_spread["c"] < 1e-6
    assert res.stats.shared_b == pytest.approx(B, rel=1e-6)
    assert res.stats.mu == pytest.approx(-0.7356, rel=1e-6)


def test_group_shape_spread_is_small():
    b = [1.3839e-4, 1.5605e-4, 1.3474e-4]
    c = [54.3405, 59.4961, 58.669]
    spread_b = (max(b) - min(b)) / np.mean(b)
    spread_c = (max(c) - min(c)) / np.mean(c)
    assert spread_b < 0.16 and spread_c < 0.16


def test_analyze_noise_counts_and_null_case():
    sc = _scenario(1, None, trials=1)
    res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", D, shared_b=B, shared_c=C)
    assert res.n_samples == 1 and res.stats.sigma2 == 0.0
    sc = _scenario(2, REFERENCE_NOISE_M1)
    res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", D, threads=1)
    assert res.n_samples == 1728
    # free-fit group means give the alternative amplitude difference
    assert res.group_mean_difference is not None


def test_null_case_calibration():
    # With no injected noise the fitted mean should sit within 2 standard errors
    # about 95% of the time; require 85% over 40 seeds.
    hits = 0
    for seed in range(40):
        sc = _scenario(seed, None)
        res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", D, shared_b=B, shared_c=C)
        hits += abs(res.stats.mu) < 2 * res.mean_standard_error
    assert hits >= 34


def test_histogram_payload():
    x = np.random.default_rng(0).normal(-0.7, 0.7, 1728)
    h = histogram(x, bins=30)
    assert sum(h["histogram"]["counts"]) == 1728
    assert len(h["histogram"]["bin_edges"]) == 31
    assert len(h["gaussian_overlay"]["x"]) == 101
    width = h["histogram"]["bin_edges"][1] - h["histogram"]["bin_edges"][0]
    area = np.trapezoid(h["gaussian_overlay"]["pdf"], h["gaussian_overlay"]["x"])
    assert area == pytest.approx(1.0, abs=0.02)
    assert max(h["gaussian_overlay"]["expected_count"]) == pytest.approx(
        max(h["gaussian_overlay"]["pdf"]) * 1728 * width)


def test_predicted_mean_improves_over_raw_sum():
    sc = _scenario(3, REFERENCE_NOISE_M1)
    res = analyze_noise(sc.tx1, sc.tx2, sc.tx12, "m1", D)
    pred = predicted_tx12_mean(sc.tx1, sc.tx2, res.stats, seed=3)
    rep = validate_prediction(pred, average_traces(sc.tx12), raw_sum(sc.tx1, sc.tx2))
    assert rep.improves_on_raw_sum
