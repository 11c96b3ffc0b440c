"""Monte Carlo study of the amplitude-noise estimator.

Repeats synthesize -> refit amplitudes -> noise cube -> Gaussian fit over many
seeds and reports how often the fitted mean and variance land inside the given
tolerances, alongside the floor set by the number of Tx12 trials: the cube
mean averages only ``trials`` independent noise draws, so its standard
deviation is at least ``sqrt(sigma2 / trials)``.

    python scripts/noise_pipeline_study.py --reps 100 --trials 12
"""
import argparse
import math
from dataclasses import replace

import numpy as np
from scipy import stats as sps

from mcnoise.models import CoefficientSet
from mcnoise.nonlinearity import (REFERENCE_NOISE_M1, analyze_noise, predicted_tx12_mean,
                                  raw_sum, validate_prediction)
from mcnoise.synthgen import SynthConfig, generate_scenario
from mcnoise.traces import TrialSet, average_traces, preprocess


def one_run(seed, trials, noise_std, stats):
    tx1 = SynthConfig("m1", CoefficientSet(2.905, stats.shared_b, stats.shared_c), seed=seed,
                      trials=trials, sample_noise_std=noise_std, nonlinearity=stats)
    tx2 = replace(tx1, base_coeffs=CoefficientSet(1.9815, stats.shared_b, stats.shared_c))
    sc = generate_scenario(tx1, tx2)
    g = [TrialSet([preprocess(t) for t in s], s.group) for s in (sc.tx1, sc.tx2, sc.tx12)]
    res = analyze_noise(*g, model="m1", threads=1)
    pred = predicted_tx12_mean(g[0], g[1], res.stats, seed)
    rep = validate_prediction(pred, average_traces(g[2]), raw_sum(g[0], g[1]))
    return res.stats.mu, res.stats.sigma2, rep.improves_on_raw_sum


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--trials", type=int, nargs="+", default=[12])
    ap.add_argument("--noise", type=float, default=0.02, help="sample noise std in V")
    ap.add_argument("--mu-tol", type=float, default=0.2)
    ap.add_argument("--sigma2-rel-tol", type=float, default=0.4)
    args = ap.parse_args()
    stats = REFERENCE_NOISE_M1
    for n in args.trials:
        rows = np.array([one_run(s, n, args.noise, stats) for s in range(args.reps)])
        mu, s2, better = rows.T
        mu_ok = np.abs(mu - stats.mu) <= args.mu_tol
        s2_ok = np.abs(s2 / stats.sigma2 - 1) <= args.sigma2_rel_tol
        floor = math.sqrt(stats.sigma2 / n)
        best_case = 2 * sps.norm.cdf(args.mu_tol / floor) - 1
        print(f"trials={n:3d}  mu ok {mu_ok.mean():.0%}  sigma2 ok {s2_ok.mean():.0%}  "
              f"both {np.mean(mu_ok & s2_ok):.0%}  beats raw sum {better.mean():.0%}")
        print(f"            mu mean {mu.mean():+.4f} sd {mu.std(ddof=1):.4f} "
              f"(floor {floor:.4f}, best-case mu pass rate {best_case:.0%})")


if __name__ == "__main__":
    main()
