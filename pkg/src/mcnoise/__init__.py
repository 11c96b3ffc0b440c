"""Channel and noise models for a nonlinear tabletop molecular communication link."""

__version__ = "0.1.0"

from .errors import (AlignmentError, DegenerateInputError, DomainError, NumericalFailure,
                     TraceFormatError, UsageError)
from .models import (CoefficientSet, ModelKind, PhysicalParams, eval_h1, eval_h2, eval_m1,
                     eval_m2, integrate, normalize_peak, peak_time, sample_model)
from .traces import (Group, SensorTrace, TimeGrid, TrialSet, align, average_traces,
                     baseline_subtract, load_manifest, load_trace, save_trace, truncate)
from .fitting import (EnsembleStats, FitOptions, FitResult, fit_ensemble, jacobian,
                      levenberg_marquardt, mean_coefficients, residuals, rmse, vmr)
from .nonlinearity import (NoiseSampleCube, NoiseStats, analyze_noise, build_noise_cube,
                           fit_gaussian, refit_amplitudes, sample_noise_process,
                           superposition_residual, synthesize_h12, validate_prediction)
from .synthgen import SynthConfig, generate_scenario, generate_trial
