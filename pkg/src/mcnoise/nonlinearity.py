"""Nonlinearity of the two-transmitter channel, treated as additive noise.

If the channel were linear, the response to both transmitters firing would
equal the sum of the single-transmitter responses. The gap
``n(t) = h12(t) - h1(t) - h2(t)`` is modelled as a scalar Gaussian amplitude
``N`` times the unit corrected-model waveform ``g(t)`` with ``b, c`` shared
by all three groups. ``N`` samples come from per-trial amplitude refits:
``N[i, j, k] = a12[k] - a1[i] - a2[j]``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import rng
from .errors import AlignmentError, DegenerateInputError, DomainError, NumericalFailure, UsageError
from .fitting import FitOptions, fit_ensemble, mean_coefficients, sample_variance
from .models import ModelKind, unit_waveform
from .traces import SensorTrace, Source, TimeGrid, average_traces, check_aligned

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseStats:
    mu: float
    sigma2: float
    model: ModelKind = ModelKind.M1
    shared_b: float = 1.4306e-4
    shared_c: float = 57.5018
    d: float = 225.0

    def __post_init__(self):
        if not self.sigma2 >= 0:
            raise DomainError(f"sigma2 must be >= 0, got {self.sigma2}")
        object.__setattr__(self, "model", ModelKind(self.model))
        if self.model.is_physical:
            raise UsageError("noise waveforms use the m1 or m2 kernel")

    def waveform(self, t):
        return unit_waveform(self.model, self.shared_b, self.shared_c, self.d, t)

    def to_dict(self):
        return {"model": self.model.value, "shared_b": self.shared_b,
                "shared_c": self.shared_c, "d": self.d, "mu": self.mu, "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, doc):
        return cls(float(doc["mu"]), float(doc["sigma2"]), ModelKind(doc["model"]),
                   float(doc["shared_b"]), float(doc["shared_c"]), float(doc["d"]))


# Gaussian amplitude-noise fits reported for the tabletop platform.
REFERENCE_NOISE_M1 = NoiseStats(-0.7356, 0.5214, ModelKind.M1, 1.4306e-4, 57.5018, 225.0)
REFERENCE_NOISE_M2 = NoiseStats(-3.9811, 14.9589, ModelKind.M2, 1.57e-4, 35.021, 225.0)


@dataclass(frozen=True, eq=False)
class NoiseSampleCube:
    samples: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a12: np.ndarray

    @property
    def size(self) -> int:
        return self.samples.size

    def flat(self) -> np.ndarray:
        return self.samples.ravel()


def superposition_residual(h12: SensorTrace, h1: SensorTrace, h2: SensorTrace) -> SensorTrace:
    """Pointwise ``h12 - h1 - h2``: one realisation of the nonlinearity noise."""
    check_aligned(h12, h1, h2)
    return h12.with_values(h12.values - h1.values - h2.values, label="superposition residual")


def refit_amplitudes(trials, model, shared_b, shared_c, d) -> np.ndarray:
    """Least-squares amplitude of every trace with ``b, c, d`` frozen.

    The model is linear in ``a``, so this is the projection
    ``<m, g> / <g, g>`` onto the unit waveform ``g``.
    """
    model = ModelKind(model)
    if not (shared_b > 0 and shared_c > 0 and d > 0):
        raise DomainError("shared b, c and d must be positive")
    out, cache = [], {}
    for tr in trials:
        key = (tr.grid.t0, tr.grid.dt, tr.grid.count)
        if key not in cache:
            g = unit_waveform(model, shared_b, shared_c, d, tr.times)
            gg = float(g @ g)
            if not np.max(np.abs(g)) > 1e-12:
                raise NumericalFailure(
                    "unit waveform vanishes on the trace grid; amplitude is unidentifiable",
                    {"grid": tr.grid.to_dict(), "b": shared_b, "c": shared_c, "d": d})
            cache[key] = (g, gg)
        g, gg = cache[key]
        out.append(float(tr.values @ g) / gg)
    return np.array(out)


def build_noise_cube(a1, a2, a12) -> NoiseSampleCube:
    """Every combination ``a12[k] - a1[i] - a2[j]``, indexed ``[i, j, k]``."""
    a1, a2, a12 = (np.asarray(x, float).ravel() for x in (a1, a2, a12))
    if not (a1.size and a2.size and a12.size):
        raise DegenerateInputError("amplitude lists must be non-empty")
    samples = a12[None, None, :] - a1[:, None, None] - a2[None, :, None]
    return NoiseSampleCube(samples, a1, a2, a12)


def fit_gaussian(samples):
    """Sample mean and unbiased sample variance."""
    x = np.asarray(samples, float).ravel()
    if x.size < 2:
        raise DomainError("need at least 2 samples to fit a Gaussian")
    return float(np.mean(x)), sample_variance(x)


def draw_amplitude(stats: NoiseStats, seed, *key) -> float:
    gen = rng.stream(seed, rng.AMPLITUDE_NOISE, *key)
    return float(stats.mu + math.sqrt(stats.sigma2) * gen.standard_normal())


def sample_noise_process(stats: NoiseStats, grid: TimeGrid, seed, *key) -> SensorTrace:
    """One realisation ``N * g(t)`` with ``N ~ Normal(mu, sigma2)``.

    Deterministic in ``(seed, *key)``.
    """
    amp = draw_amplitude(stats, seed, *key)
    return SensorTrace(grid, amp * stats.waveform(grid.times), f"noise N={amp:.6g}",
                       Source.SYNTHETIC)


def synthesize_h12(h1: SensorTrace, h2: SensorTrace, noise: SensorTrace) -> SensorTrace:
    check_aligned(h1, h2, noise)
    return SensorTrace(h1.grid, h1.values + h2.values + noise.values,
                       f"{h1.label}+{h2.label}+noise", Source.SYNTHETIC)


def synthesize_all(tx1, tx2, stats: NoiseStats, seed, clamp=False) -> list:
    """Predicted two-transmitter responses for every ``(i, j)`` pair.

    Each pair gets its own noise draw keyed by ``(seed, i, j)``. ``clamp`` cuts
    negative values to zero (display only; it biases the statistics).
    """
    out = []
    for i, h1 in enumerate(tx1):
        for j, h2 in enumerate(tx2):
            noise = sample_noise_process(stats, h1.grid, seed, i, j)
            h = synthesize_h12(h1, h2, noise)
            if clamp:
                h = h.with_values(np.maximum(h.values, 0.0))
            out.append(h)
    return out


@dataclass(frozen=True)
class ValidationReport:
    rmse: float
    raw_sum_rmse: float
    peak_value_rel_error: float
    peak_time_offset: float
    improves_on_raw_sum: bool

    def to_dict(self):
        return {"rmse": self.rmse, "raw_sum_rmse": self.raw_sum_rmse,
                "peak_value_rel_error": self.peak_value_rel_error,
                "peak_time_offset": self.peak_time_offset,
                "improves_on_raw_sum": self.improves_on_raw_sum}


def _curve_rmse(x: SensorTrace, y: SensorTrace) -> float:
    return float(np.sqrt(np.mean((x.values - y.values) ** 2)))


def validate_prediction(predicted_mean: SensorTrace, measured_mean: SensorTrace,
                        raw_sum: SensorTrace | None = None) -> ValidationReport:
    """Compare a predicted Tx12 mean curve against the measured one.

    ``raw_sum`` is the uncorrected ``mean(h1) + mean(h2)``; the prediction
    improves on it when its RMSE against the measurement is strictly lower.
    """
    traces = [predicted_mean, measured_mean] + ([raw_sum] if raw_sum is not None else [])
    check_aligned(*traces)
    err = _curve_rmse(predicted_mean, measured_mean)
    raw_err = _curve_rmse(raw_sum, measured_mean) if raw_sum is not None else float("nan")
    kp, km = int(np.argmax(predicted_mean.values)), int(np.argmax(measured_mean.values))
    peak_m = measured_mean.values[km]
    rel = (predicted_mean.values[kp] - peak_m) / abs(peak_m) if peak_m != 0 else float("nan")
    offset = float(predicted_mean.times[kp] - measured_mean.times[km])
    return ValidationReport(err, raw_err, float(rel), offset,
                            bool(raw_sum is not None and err < raw_err))


# --------------------------------------------------------------------------
# Full pipeline

@dataclass
class NoiseAnalysis:
    stats: NoiseStats
    cube: NoiseSampleCube
    mean_standard_error: float
    group_means: dict = field(default_factory=dict)
    coefficient_spread: dict = field(default_factory=dict)
    skewness: float = float("nan")
    excess_kurtosis: float = float("nan")

    @property
    def n_samples(self):
        return self.cube.size

    @property
    def group_mean_difference(self):
        """``mean a12 - mean a1 - mean a2`` from the free fits, when available."""
        m = self.group_means
        if not all(g in m for g in ("Tx1", "Tx2", "Tx12")):
            return None
        return m["Tx12"]["a"] - m["Tx1"]["a"] - m["Tx2"]["a"]


def shared_shape(groups, model, d, opts=None, threads=None):
    """Fit each group freely and average the group-mean coefficients.

    Returns ``(shared_b, shared_c, group_means, spread)`` where ``spread`` is
    ``(max - min) / mean`` across groups for ``b`` and ``c``.
    """
    ensembles = {name: fit_ensemble(model, trials, d, opts, threads)
                 for name, trials in groups.items()}
    shared = mean_coefficients(ensembles.values(), distance=d)
    means = {name: dict(e.mean) for name, e in ensembles.items()}
    spread = {}
    for coef, ref in (("b", shared.shape), ("c", shared.effective_speed)):
        vals = [m[coef] for m in means.values()]
        spread[coef] = (max(vals) - min(vals)) / ref
    return shared.shape, shared.effective_speed, means, spread


def analyze_noise(tx1, tx2, tx12, model, d=225.0, shared_b=None, shared_c=None,
                  opts: FitOptions | None = None, threads=None) -> NoiseAnalysis:
    """Refit amplitudes with frozen shared ``b, c``, build the cube, fit a Gaussian.

    When ``shared_b``/``shared_c`` are not given they are the averages of the
    three group-mean coefficients from free fits.
    """
    model = ModelKind(model)
    groups = {"Tx1": tx1, "Tx2": tx2, "Tx12": tx12}
    for name, trials in groups.items():
        if not len(trials):
            raise DegenerateInputError(f"{name} group is empty")
    first = next(iter(tx1))
    for trials in groups.values():
        for tr in trials:
            if not tr.grid.matches(first.grid):
                raise AlignmentError(f"trace {tr.label!r} is not on the common grid")

    group_means, spread = {}, {}
    if shared_b is None or shared_c is None:
        b, c, group_means, spread = shared_shape(groups, model, d, opts, threads)
        shared_b = b if shared_b is None else shared_b
        shared_c = c if shared_c is None else shared_c

    amps = {name: refit_amplitudes(trials, model, shared_b, shared_c, d)
            for name, trials in groups.items()}
    cube = build_noise_cube(amps["Tx1"], amps["Tx2"], amps["Tx12"])
    flat = cube.flat()
    if flat.size >= 2:
        mu, sigma2 = fit_gaussian(flat)
    else:
        mu, sigma2 = float(flat[0]), 0.0
    se = math.sqrt(sum(sample_variance(a) / a.size for a in amps.values()))
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # near-constant cubes trip scipy's cancellation warning; values are still defined
        warnings.simplefilter("ignore", RuntimeWarning)
        skew = float(sps.skew(flat)) if flat.size > 2 else float("nan")
        kurt = float(sps.kurtosis(flat)) if flat.size > 3 else float("nan")
    stats = NoiseStats(mu, sigma2, model, float(shared_b), float(shared_c), float(d))
    return NoiseAnalysis(stats, cube, se, group_means, spread, skew, kurt)


def histogram(samples, bins="auto", overlay_points=101, stats=None):
    """Histogram counts plus the matching Gaussian density curve."""
    x = np.asarray(samples, float).ravel()
    counts, edges = np.histogram(x, bins=bins)
    if stats is None:
        mu, sigma2 = fit_gaussian(x) if x.size > 1 else (float(x[0]), 0.0)
    else:
        mu, sigma2 = stats
    grid = np.linspace(edges[0], edges[-1], overlay_points)
    width = float(edges[1] - edges[0])
    if sigma2 > 0:
        pdf = sps.norm.pdf(grid, loc=mu, scale=math.sqrt(sigma2))
    else:
        pdf = np.zeros_like(grid)
    return {
        "histogram": {"bin_edges": edges.tolist(), "counts": counts.tolist()},
        "gaussian_overlay": {"x": grid.tolist(), "pdf": pdf.tolist(),
                             "expected_count": (pdf * x.size * width).tolist()},
    }


def predicted_tx12_mean(tx1, tx2, stats: NoiseStats, seed, clamp=False) -> SensorTrace:
    """Mean of the ``len(tx1) * len(tx2)`` synthesized responses."""
    synth = synthesize_all(tx1, tx2, stats, seed, clamp)
    mean = average_traces(synth)
    return mean.with_values(mean.values, label=f"predicted Tx12 (mean of {len(synth)})")


def raw_sum(tx1, tx2) -> SensorTrace:
    m1, m2 = average_traces(tx1), average_traces(tx2)
    check_aligned(m1, m2)
    return m1.with_values(m1.values + m2.values, label="Tx1+Tx2")
