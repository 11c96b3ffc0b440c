"""Closed-form impulse-response models of the tabletop channel.

Two physical models describe a one-dimensional Wiener process with drift:

* ``h1``: particle density observed at distance ``d`` (non-absorbing sensor),
  ``M / sqrt(4 pi D t) * exp(-(d - v t)^2 / (4 D t))``;
* ``h2``: first-arrival-time density at ``d`` (absorbing sensor), the inverse
  Gaussian ``M d / sqrt(4 pi D t^3) * exp(-(v t - d)^2 / (4 D t))``.

Two corrected models lump sensor time-scaling, turbulent diffusion and the
effective droplet speed into coefficients ``a, b, c``:

* ``m1``: ``a / sqrt(t) * exp(-b (d - c t)^2 / t)``;
* ``m2``: ``a / t^1.5 * exp(-b (c t - d)^2 / t)``.

Units are cm, s and volts throughout. Times must be strictly positive.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, UsageError
from .traces import SensorTrace, Source, TimeGrid


class ModelKind(str, enum.Enum):
    H1 = "h1"
    H2 = "h2"
    M1 = "m1"
    M2 = "m2"

    @property
    def is_physical(self) -> bool:
        return self in (ModelKind.H1, ModelKind.H2)

    @property
    def time_power(self) -> float:
        """Exponent ``p`` of the ``t^-p`` prefactor."""
        return 0.5 if self in (ModelKind.H1, ModelKind.M1) else 1.5


@dataclass(frozen=True)
class PhysicalParams:
    """Parameters of the drift-diffusion models (``M`` molecules, ``D`` cm^2/s, ``d`` cm, ``v`` cm/s)."""

    molecule_count: float
    diffusion_coeff: float
    distance: float
    flow_speed: float

    def __post_init__(self):
        if not self.molecule_count > 0:
            raise DomainError("molecule_count must be > 0")
        if not self.diffusion_coeff > 0:
            raise DomainError("diffusion_coeff must be > 0")
        if not self.distance > 0:
            raise DomainError("distance must be > 0")
        if not self.flow_speed >= 0:
            raise DomainError("flow_speed must be >= 0")

    @classmethod
    def reference(cls, molecule_count=1.0):
        """Isopropyl alcohol, 225 cm separation, fan on high."""
        return cls(molecule_count, 0.0959, 225.0, 190.0)


@dataclass(frozen=True)
class CoefficientSet:
    """Corrected-model coefficients; ``distance`` is fixed, never fitted.

    ``amplitude`` may be negative when the set describes a noise amplitude.
    """

    amplitude: float
    shape: float
    effective_speed: float
    distance: float = 225.0

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise DomainError("amplitude must be finite")
        if not self.shape > 0:
            raise DomainError("shape coefficient b must be > 0")
        if not self.effective_speed > 0:
            raise DomainError("effective speed c must be > 0")
        if not self.distance > 0:
            raise DomainError("distance must be > 0")

    @property
    def a(self):
        return self.amplitude

    @property
    def b(self):
        return self.shape

    @property
    def c(self):
        return self.effective_speed

    @property
    def d(self):
        return self.distance

    def as_vector(self) -> np.ndarray:
        return np.array([self.amplitude, self.shape, self.effective_speed])

    def to_dict(self):
        return {"a": self.amplitude, "b": self.shape, "c": self.effective_speed,
                "d": self.distance}


def _times(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("models are only defined for t > 0")
    return t


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def eval_h1(params: PhysicalParams, t):
    t = _times(t)
    D, d, v = params.diffusion_coeff, params.distance, params.flow_speed
    out = params.molecule_count / np.sqrt(4 * np.pi * D * t) * np.exp(-(d - v * t) ** 2 / (4 * D * t))
    return _scalar_or_array(out)


def eval_h2(params: PhysicalParams, t):
    t = _times(t)
    D, d, v = params.diffusion_coeff, params.distance, params.flow_speed
    out = (params.molecule_count * d / np.sqrt(4 * np.pi * D * t ** 3)
           * np.exp(-(v * t - d) ** 2 / (4 * D * t)))
    return _scalar_or_array(out)


def unit_waveform(kind, shape, speed, distance, t):
    """Corrected model with unit amplitude; the noise and refit code share it."""
    kind = ModelKind(kind)
    if kind.is_physical:
        raise UsageError(f"unit waveform is defined for m1/m2, not {kind.value}")
    t = _times(t)
    out = t ** -kind.time_power * np.exp(-shape * (distance - speed * t) ** 2 / t)
    return _scalar_or_array(out)


def eval_m1(coeffs: CoefficientSet, t):
    return coeffs.amplitude * unit_waveform(ModelKind.M1, coeffs.shape, coeffs.effective_speed,
                                            coeffs.distance, t)


def eval_m2(coeffs: CoefficientSet, t):
    return coeffs.amplitude * unit_waveform(ModelKind.M2, coeffs.shape, coeffs.effective_speed,
                                            coeffs.distance, t)


_EVALUATORS = {
    ModelKind.H1: (PhysicalParams, eval_h1),
    ModelKind.H2: (PhysicalParams, eval_h2),
    ModelKind.M1: (CoefficientSet, eval_m1),
    ModelKind.M2: (CoefficientSet, eval_m2),
}


def evaluate(kind, params, t):
    kind = ModelKind(kind)
    expected, fn = _EVALUATORS[kind]
    if not isinstance(params, expected):
        raise UsageError(
            f"model {kind.value} takes {expected.__name__}, got {type(params).__name__}")
    return fn(params, t)


def sample_model(kind, params, grid: TimeGrid, label=None) -> SensorTrace:
    """Evaluate a model on every point of ``grid``."""
    kind = ModelKind(kind)
    values = np.asarray(evaluate(kind, params, grid.times), dtype=float)
    return SensorTrace(grid, values, label or kind.value, Source.SYNTHETIC)


def peak_time(kind, params) -> float:
    """Closed-form maximiser of the model in ``t``.

    Every kernel has the form ``t^-p exp(-b (d - c t)^2 / t)``. Setting the
    derivative of its logarithm to zero gives ``b c^2 t^2 + p t - b d^2 = 0``,
    whose positive root is returned. For ``h1``/``h2``, ``b = 1/(4D)`` and
    ``c = v``.
    """
    kind = ModelKind(kind)
    if kind.is_physical:
        if not isinstance(params, PhysicalParams):
            raise UsageError(f"model {kind.value} takes PhysicalParams")
        b, c, d = 1.0 / (4 * params.diffusion_coeff), params.flow_speed, params.distance
    else:
        if not isinstance(params, CoefficientSet):
            raise UsageError(f"model {kind.value} takes CoefficientSet")
        b, c, d = params.shape, params.effective_speed, params.distance
    p = kind.time_power
    q = b * c * c
    # Rationalised root avoids cancellation when p is large relative to b c d.
    return 2 * b * d * d / (p + math.sqrt(p * p + 4 * q * b * d * d))


def grid_argmax(trace: SensorTrace) -> float:
    return float(trace.times[int(np.argmax(trace.values))])


def count_local_maxima(values) -> int:
    """Number of rise-to-fall transitions in the discrete differences."""
    diff = np.diff(np.asarray(values, dtype=float))
    signs = np.sign(diff[diff != 0])
    return int(np.sum((signs[:-1] > 0) & (signs[1:] < 0)))


def normalize_peak(trace: SensorTrace) -> SensorTrace:
    """Divide a trace by its maximum, so the output peaks at exactly 1."""
    peak = float(np.max(trace.values))
    if not peak > 0:
        raise DegenerateInputError(f"cannot peak-normalize a trace whose maximum is {peak}")
    return trace.with_values(trace.values / peak)


def integrate(trace: SensorTrace) -> float:
    """Trapezoidal integral of the trace over its grid."""
    if len(trace) < 2:
        raise DomainError("need at least 2 samples to integrate")
    return float(np.trapezoid(trace.values, dx=trace.grid.dt))
