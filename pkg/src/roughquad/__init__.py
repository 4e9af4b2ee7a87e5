"""Exact propagators for quadratic Hamiltonians driven by rough (Hölder) noise in time."""

import sys

__version__ = "0.1.0"

from .errors import (BranchLost, Caustic, CovarianceNotPD, DegenerateHessian,  # noqa: E402
                     HypothesisViolated, NoContraction, NonSymmetric, NotCauchy, NotSiegel,
                     NumericalFailure, QuadratureUnderResolved, RoughQuadError, StepRejected,
                     SymplecticityLost, UnderResolved)
from .paths import (DriverPath, TimeGrid, holder_norm, make_brownian, make_fbm,  # noqa: E402
                    mollify, read_path_csv, write_path_csv, zero_path)
from .hamiltonians import (NoiseHamiltonian, QuadraticHamiltonian,  # noqa: E402
                           validate_hypotheses)
from .classical_flow import AffineSymplecticMap, action, solve_flow  # noqa: E402
from .kernel import (KernelClosedForm, SiegelMatrix, bargmann_element,  # noqa: E402
                     dispersive_sup, hk_kernel, mehler_kernel)
from .propagator import (GaussianState, WaveFunction, apply_kernel,  # noqa: E402
                         egorov_residual, gaussian_trajectory, propagate_gaussian,
                         propagate_rough)
from .nls import NlsConfig, solve_nls  # noqa: E402

__all__ = [n for n, v in dict(globals()).items()
           if not n.startswith("_") and not isinstance(v, type(sys))]
