"""Noisy tracking differentiators: simulation, certificates and convergence checks."""

__version__ = "0.1.0"

from .analysis import (BoundReport, EnsembleStats, GeneralizedDerivativeReport, TestFunction,
                       appendix_a_constants, ensemble_ms_error, generalized_derivative_check,
                       lemma1_moment_bound, make_bump, theorem1_bound)
from .design import (LinearDesign, LyapunovCertificate, StabilityError, TdFunction,
                     admissible_r_min, builtin_nonlinear_2d, hurwitz_check,
                     nonlinear_2d_certificate, solve_lyapunov, verify_certificate)
from .noise import (IncrementStream, OuParams, brownian_increments, gamma, ou_second_moment,
                    simulate_ou_exact)
from .simulate import (DivergenceError, ScaledErrorState, SignalModel, SimulationGrid, TdConfig,
                       Trajectory, simulate_scaled_error, simulate_td,
                       transform_to_error_coordinates)
