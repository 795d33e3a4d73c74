"""Slow-manifold projection for explicit fast-slow ODE systems.

Locates points on the attracting slow manifold of a system

    x' = f(x, y, eps),    eps * y' = g(x, y, eps)

by functional iteration on corrections built from high-order time
derivatives of the fast variables, with closed-form stability regions,
a subspace-stabilized fallback for divergent step sizes, and an
experiment harness that verifies the advertised O(eps^(m+1)) accuracy.

The batch front door is :class:`SlowManifoldProjector` (fit/transform);
the underlying operations live in :mod:`slowmanifold.systems`,
:mod:`slowmanifold.projector`, :mod:`slowmanifold.rpm`,
:mod:`slowmanifold.stability`, and :mod:`slowmanifold.harness`.
The ``slowman`` console script exposes everything from the shell.
"""

from .derivatives import DerivativeMode, L_hat, L_m, delta_forward
from .estimator import SlowManifoldProjector
from .exceptions import (BracketError, DegeneracyError, DivergenceError,
                         FitError, NumericalError, PrecisionLossError,
                         RootFindError, SlowManifoldError,
                         TangentSingularityError)
from .harness import (OrderFit, SweepSpec, compare_regions,
                      empirical_threshold, order_of_accuracy)
from .projector import (IterationConfig, IterationTrace, error_bound, project,
                        project_cascade)
from .rpm import RpmConfig, RpmState, identify_subspace, rpm_iterate
from .stability import (EigenMode, StabilityReport, boundary_residual, h_max,
                        in_sector, mu, mu_hat, raster_region, uniform_bound,
                        verdict)
from .systems import (FastSlowSystem, FlowMap, ReferenceManifold,
                      complex_pair_test, expand_slow_manifold, flow,
                      linear_test, make_system, michaelis_menten)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "SlowManifoldProjector",
    "FastSlowSystem", "FlowMap", "ReferenceManifold",
    "linear_test", "michaelis_menten", "complex_pair_test", "make_system",
    "flow", "expand_slow_manifold",
    "DerivativeMode", "L_m", "L_hat", "delta_forward",
    "IterationConfig", "IterationTrace", "project", "project_cascade",
    "error_bound",
    "RpmConfig", "RpmState", "identify_subspace", "rpm_iterate",
    "EigenMode", "StabilityReport", "mu", "mu_hat", "in_sector", "h_max",
    "uniform_bound", "boundary_residual", "raster_region", "verdict",
    "SweepSpec", "OrderFit", "order_of_accuracy", "empirical_threshold",
    "compare_regions",
    "SlowManifoldError", "DivergenceError", "RootFindError",
    "DegeneracyError", "PrecisionLossError", "NumericalError",
    "BracketError", "FitError", "TangentSingularityError",
]
