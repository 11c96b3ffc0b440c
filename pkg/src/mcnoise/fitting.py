"""Least-squares estimation of corrected-model coefficients.

Each trial is fitted independently by minimising
``sum_k (m(t_k) - model(t_k; a, b, c))^2`` with a Levenberg-Marquardt solver
(Marquardt's diagonal scaling, multiplicative damping schedule). The distance
``d`` is always held fixed. Ensemble helpers aggregate per-trial fits into the
mean / variance / variance-to-mean table used to judge coefficient stability.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError, NumericalFailure, UsageError
from .models import CoefficientSet, ModelKind, unit_waveform
from .traces import SensorTrace, TrialSet

log = logging.getLogger(__name__)

PARAM_NAMES = ("a", "b", "c")


def _fit_kind(kind) -> ModelKind:
    kind = ModelKind(kind)
    if kind.is_physical:
        raise UsageError(f"only m1/m2 can be fitted, got {kind.value}")
    return kind


# --------------------------------------------------------------------------
# Residuals and Jacobian

def model_values(kind, p, d, t):
    kind = _fit_kind(kind)
    a, b, c = p
    return a * unit_waveform(kind, b, c, d, t)


def residuals(kind, p, d, trace: SensorTrace) -> np.ndarray:
    """``m(t_k) - model(t_k; p)`` for every sample."""
    return trace.values - model_values(kind, p, d, trace.times)


def jacobian(kind, p, d, trace: SensorTrace) -> np.ndarray:
    """Analytic ``N x 3`` matrix of model partials with respect to ``a, b, c``.

    This is the Jacobian of the model, i.e. minus the Jacobian of the residual.
    """
    kind = _fit_kind(kind)
    a, b, c = p
    t = trace.times
    g = unit_waveform(kind, b, c, d, t)
    f = a * g
    # m1 uses (d - ct), m2 uses (ct - d); squared they agree, and the
    # c-derivative of -b(d - ct)^2/t is 2b(d - ct) either way.
    gap = d - c * t
    return np.column_stack([g, -f * gap ** 2 / t, 2 * b * f * gap])


# --------------------------------------------------------------------------
# Solver

class Termination(str, enum.Enum):
    GRADIENT = "gradient_tolerance"
    STEP = "step_tolerance"
    RESIDUAL = "residual_tolerance"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class FitOptions:
    initial_guess: tuple | None = None
    lower: tuple = (1e-12, 1e-7, 1.0)
    upper: tuple = (1e3, 1e-1, 1e3)
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-8
    residual_tolerance: float = 1e-10
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    # Parameters excluded from the fit keep their initial value.
    free: tuple = (True, True, True)

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise UsageError("each lower bound must be below its upper bound")
        if min(self.gradient_tolerance, self.step_tolerance, self.residual_tolerance) <= 0:
            raise UsageError("tolerances must be positive")
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be >= 1")
        if self.damping_up <= 1 or self.damping_down <= 1 or self.damping_init <= 0:
            raise UsageError("damping factors must exceed 1 and the initial damping be positive")
        if not any(self.free):
            raise UsageError("at least one parameter must be free")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FitResult:
    coeffs: CoefficientSet
    rmse: float
    residual_norm: float
    iterations: int
    converged: bool
    termination_reason: Termination
    label: str = ""
    model: ModelKind = ModelKind.M1

    def to_dict(self):
        return {
            "label": self.label,
            "model": self.model.value,
            "coeffs": self.coeffs.to_dict(),
            "rmse": self.rmse,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "termination_reason": self.termination_reason.value,
        }


def initial_guess(kind, trace: SensorTrace, d) -> np.ndarray:
    """Heuristic start that puts the exponent-zero point on the observed peak.

    ``c0 = d / t_peak``; ``b0`` solves the log-ratio between the peak and a
    second sample (at ``2 t_peak`` when on the grid, else ``t_peak / 2`` or the
    last sample); ``a0`` matches the peak height.
    """
    kind = _fit_kind(kind)
    y, t = trace.values, trace.times
    k = int(np.argmax(y))
    t_peak, y_peak = t[k], y[k]
    if not y_peak > 0:
        raise DegenerateInputError(f"trace {trace.label!r} has no positive peak")
    p = kind.time_power
    c0 = d / t_peak
    a0 = y_peak * t_peak ** p

    b0 = None
    for t2 in (2 * t_peak, 0.5 * t_peak, t[-1], t[0]):
        j = int(round((t2 - t[0]) / trace.grid.dt))
        if j < 0 or j >= len(t) or j == k or not y[j] > 0:
            continue
        t2 = t[j]
        # log y_peak - log y2 = p log(t2/t_peak) + b * [(d - c0 t2)^2 / t2 - 0]
        denom = (d - c0 * t2) ** 2 / t2
        if denom > 0:
            b_try = (math.log(y_peak / y[j]) - p * math.log(t2 / t_peak)) / denom
            if b_try > 0:
                b0 = b_try
                break
    if b0 is None:
        b0 = 1e-4
    return np.array([a0, b0, c0])


def _scaled_solve(A, g, lam):
    """Solve ``(A + lam diag(A)) x = g`` after symmetric diagonal scaling."""
    s = np.sqrt(np.maximum(np.diag(A), np.finfo(float).tiny))
    As = A / np.outer(s, s)
    As[np.diag_indices_from(As)] += lam
    return np.linalg.solve(As, g / s) / s


def levenberg_marquardt(kind, trace: SensorTrace, d, opts: FitOptions | None = None) -> FitResult:
    """Fit ``m1``/``m2`` coefficients to one trace.

    The iterate is clamped to ``[opts.lower, opts.upper]`` after every step.
    Running out of iterations is not an error: the result carries
    ``converged=False``. A :class:`NumericalFailure` is raised only when the
    damped normal equations cannot be solved at any damping level.
    """
    kind = _fit_kind(kind)
    opts = opts or FitOptions()
    if len(trace) < 4:
        raise DomainError("need at least 4 samples to fit 3 coefficients")
    lower, upper = np.asarray(opts.lower, float), np.asarray(opts.upper, float)
    free = np.asarray(opts.free, bool)
    start = (np.asarray(opts.initial_guess, float) if opts.initial_guess is not None
             else initial_guess(kind, trace, d))
    p = np.clip(start, lower, upper)
    t, y = trace.times, trace.values

    def evaluate(q):
        r = y - model_values(kind, q, d, t)
        return r, float(r @ r)

    r, cost = evaluate(p)
    lam = opts.damping_init
    reason, iterations = Termination.MAX_ITERATIONS, 0
    for iterations in range(opts.max_iterations + 1):
        J = jacobian(kind, p, d, trace)[:, free]
        grad = J.T @ r
        if np.max(np.abs(grad)) < opts.gradient_tolerance:
            reason = Termination.GRADIENT
            break
        if iterations == opts.max_iterations:
            break
        A = J.T @ J
        while True:
            try:
                delta = _scaled_solve(A, grad, lam)
            except np.linalg.LinAlgError:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                lam *= opts.damping_up
                if lam > 1e300:
                    raise NumericalFailure(
                        "damped normal equations are singular at every damping level",
                        {"params": p.tolist(), "cost": cost, "iteration": iterations})
                continue
            trial = p.copy()
            trial[free] += delta
            trial = np.clip(trial, lower, upper)
            step = np.max(np.abs(trial - p) / np.maximum(np.abs(p), np.finfo(float).tiny))
            r_new, cost_new = evaluate(trial)
            if np.isfinite(cost_new) and cost_new < cost:
                decrease = (cost - cost_new) / cost
                p, r, cost = trial, r_new, cost_new
                lam = max(lam / opts.damping_down, 1e-300)
                break
            if step < opts.step_tolerance:
                decrease = None
                break
            lam *= opts.damping_up
        if step < opts.step_tolerance:
            reason = Termination.STEP
            break
        if decrease is not None and decrease < opts.residual_tolerance:
            reason = Termination.RESIDUAL
            break

    converged = reason is not Termination.MAX_ITERATIONS
    if not converged:
        log.warning("fit of %r did not converge in %d iterations", trace.label, opts.max_iterations)
    norm = math.sqrt(cost)
    return FitResult(
        coeffs=CoefficientSet(float(p[0]), float(p[1]), float(p[2]), float(d)),
        rmse=norm / math.sqrt(len(trace)),
        residual_norm=norm,
        iterations=iterations,
        converged=converged,
        termination_reason=reason,
        label=trace.label,
        model=kind,
    )


def fit_with_restarts(kind, trace, d, opts=None, restarts=0):
    """Run the solver from the heuristic start and ``restarts`` rescaled starts; keep the best.

    Restart ``i`` multiplies the heuristic ``c0`` by ``0.75**i`` or ``1.25**i``
    alternately, so results are deterministic.
    """
    opts = opts or FitOptions()
    base = (np.asarray(opts.initial_guess, float) if opts.initial_guess is not None
            else initial_guess(kind, trace, d))
    best = None
    for i in range(restarts + 1):
        guess = base.copy()
        if i:
            guess[2] *= (0.75 if i % 2 else 1.25) ** ((i + 1) // 2)
        res = levenberg_marquardt(kind, trace, d, _replace_guess(opts, guess))
        if best is None or res.residual_norm < best.residual_norm:
            best = res
    return best


def _replace_guess(opts, guess):
    fields = asdict(opts)
    fields["initial_guess"] = tuple(float(x) for x in guess)
    return FitOptions(**fields)


# --------------------------------------------------------------------------
# Goodness of fit and ensemble statistics

def rmse(model_values, trace) -> float:
    """Root mean square difference between a model curve and a trace (or array)."""
    yhat = np.asarray(model_values, float)
    y = trace.values if isinstance(trace, SensorTrace) else np.asarray(trace, float)
    if yhat.shape != y.shape:
        raise UsageError(f"length mismatch: {yhat.size} model values vs {y.size} samples")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def sample_variance(samples) -> float:
    """Unbiased (n - 1) variance; 0 for a single sample."""
    x = np.asarray(samples, float)
    if x.size == 0:
        raise DegenerateInputError("variance of an empty sample")
    return float(np.var(x, ddof=1)) if x.size > 1 else 0.0


def vmr(samples) -> float:
    """Variance-to-mean ratio with the unbiased variance."""
    x = np.asarray(samples, float)
    if x.size == 0:
        raise DegenerateInputError("VMR of an empty sample")
    mean = float(np.mean(x))
    if mean == 0:
        raise DegenerateInputError("VMR is undefined for a zero mean")
    return sample_variance(x) / mean


@dataclass
class EnsembleStats:
    model: ModelKind
    distance: float
    mean: dict
    variance: dict
    vmr: dict
    mean_rmse: float
    fits: list
    failures: list = field(default_factory=list)

    @property
    def mean_coeffs(self) -> CoefficientSet:
        return CoefficientSet(self.mean["a"], self.mean["b"], self.mean["c"], self.distance)

    def to_dict(self):
        return {
            "mean": self.mean,
            "variance": self.variance,
            "vmr": self.vmr,
            "mean_rmse": self.mean_rmse,
            "n_trials": len(self.fits),
            "failures": self.failures,
        }


def summarize_fits(kind, fits, distance, failures=()) -> EnsembleStats:
    if not fits:
        raise NumericalFailure("no trial could be fitted", {"failures": list(failures)})
    rows = np.array([f.coeffs.as_vector() for f in fits])
    mean, var, ratio = {}, {}, {}
    for i, name in enumerate(PARAM_NAMES):
        mean[name] = float(np.mean(rows[:, i]))
        var[name] = sample_variance(rows[:, i])
        ratio[name] = var[name] / mean[name] if mean[name] != 0 else float("nan")
    return EnsembleStats(
        model=ModelKind(kind), distance=float(distance), mean=mean, variance=var, vmr=ratio,
        mean_rmse=float(np.mean([f.rmse for f in fits])), fits=list(fits),
        failures=list(failures))


def fit_ensemble(kind, trials: TrialSet | Sequence[SensorTrace], d, opts=None,
                 threads=None, restarts=0) -> EnsembleStats:
    """Fit every trial and aggregate the coefficients.

    Trials whose fit raises :class:`NumericalFailure` or has no usable peak are
    recorded in ``failures`` and excluded from the statistics. Output does not
    depend on ``threads``.
    """
    kind = _fit_kind(kind)
    traces = list(trials)
    if not traces:
        raise DegenerateInputError("cannot fit an empty trial set")

    def one(trace):
        try:
            return fit_with_restarts(kind, trace, d, opts, restarts)
        except (NumericalFailure, DegenerateInputError) as exc:
            return exc

    if threads == 1 or len(traces) == 1:
        outcomes = [one(tr) for tr in traces]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, traces))
    fits, failures = [], []
    for trace, out in zip(traces, outcomes):
        if isinstance(out, Exception):
            log.warning("trial %r excluded: %s", trace.label, out)
            failures.append({"label": trace.label, "error": str(out)})
        else:
            fits.append(out)
    return summarize_fits(kind, fits, d, failures)


def mean_coefficients(rows, distance=None) -> CoefficientSet:
    """Average coefficient rows (ensemble stats, coefficient sets, or ``(a, b, c)`` tuples)."""
    rows = list(rows)
    if not rows:
        raise DegenerateInputError("no coefficient rows to average")
    vecs, dists = [], []
    for row in rows:
        if isinstance(row, EnsembleStats):
            row = row.mean_coeffs
        if isinstance(row, CoefficientSet):
            vecs.append(row.as_vector())
            dists.append(row.distance)
        else:
            vecs.append(np.asarray(row[:3], float))
    a, b, c = np.mean(np.array(vecs), axis=0)
    if distance is None:
        distance = dists[0] if dists else 225.0
    return CoefficientSet(float(a), float(b), float(c), float(distance))
