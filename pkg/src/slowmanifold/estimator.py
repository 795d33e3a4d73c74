"""Scikit-learn style front door for batch slow-manifold projection.

The core operation of this package is a transform: slow coordinates go
in, the corresponding fast coordinates on the slow manifold come out.
:class:`SlowManifoldProjector` packages that as a standard
fit/transform estimator so it can sit in a pipeline next to scalers
and regressors, carry its settings through ``get_params``/``clone``,
and validate its inputs the way the rest of the ecosystem expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .derivatives import DerivativeMode
from .exceptions import SlowManifoldError
from .projector import IterationConfig, IterationTrace, project
from .rpm import RpmConfig, rpm_iterate
from .stability import verdict
from .systems import FastSlowSystem, default_flow_map

__all__ = ["SlowManifoldProjector"]


class SlowManifoldProjector(TransformerMixin, BaseEstimator):
    """Project slow coordinates onto the slow manifold of a system.

    Parameters
    ----------
    system : FastSlowSystem
        The fast-slow system whose manifold is targeted.
    m : int, default 0
        Derivative order of the correction; output accuracy is
        ``O(epsilon^(m+1))``.
    variant : {"analytic-recursive", "forward-difference"}
    h_over_eps : float, default 1.0
        Iteration step as a multiple of the system's epsilon
        (analytic-recursive variant).
    h_hat_over_eps : float, optional
        Stencil spacing as a multiple of epsilon (forward-difference
        variant; required there).
    eta : float, default 1.0
        Damping ratio of the forward-difference variant.
    tol : float, optional
        Stopping tolerance; default is ``epsilon^(m+1)``.
    max_iters : int, default 10000
    use_rpm : bool, default False
        Stabilize with the subspace-split iteration instead of the
        plain one.
    rpm_delta : float, default 0.2
        Modulus margin of the subspace split when ``use_rpm``.

    Attributes
    ----------
    spectrum_ : tuple of EigenMode
        Fast-Jacobian eigenvalues at the first fitted slow point.
    report_ : StabilityReport
        Closed-form stability verdict for the configured iteration at
        that point.
    n_features_in_ : int

    Examples
    --------
    >>> from slowmanifold.systems import linear_test
    >>> proj = SlowManifoldProjector(system=linear_test(1.0, 1.0, 0.01), m=1)
    >>> proj.fit_transform([[1.0]]).round(4)
    array([[0.99]])
    """

    def __init__(self, system: FastSlowSystem | None = None, m: int = 0,
                 variant: str = "analytic-recursive", h_over_eps: float = 1.0,
                 h_hat_over_eps: float | None = None, eta: float = 1.0,
                 tol: float | None = None, max_iters: int = 10000,
                 use_rpm: bool = False, rpm_delta: float = 0.2):
        self.system = system
        self.m = m
        self.variant = variant
        self.h_over_eps = h_over_eps
        self.h_hat_over_eps = h_hat_over_eps
        self.eta = eta
        self.tol = tol
        self.max_iters = max_iters
        self.use_rpm = use_rpm
        self.rpm_delta = rpm_delta

    def _build(self):
        sys = self.system
        if not isinstance(sys, FastSlowSystem):
            raise ValueError("system must be a FastSlowSystem instance")
        eps = sys.epsilon
        if self.variant == "analytic-recursive":
            mode = DerivativeMode.analytic(self.h_over_eps * eps)
            fm = None
        else:
            if self.h_hat_over_eps is None:
                raise ValueError(
                    "forward-difference variant requires h_hat_over_eps")
            mode = DerivativeMode.differenced(self.h_hat_over_eps * eps,
                                              eta=self.eta)
            fm = default_flow_map(sys, mode.H_hat)
        cfg = IterationConfig(m=self.m, mode=mode, tol=self.tol,
                              max_iters=self.max_iters,
                              seed_policy="critical-manifold")
        return sys, fm, cfg

    def fit(self, X, y=None):
        """Validate inputs and assess stability at the first slow point."""
        X = check_array(X, dtype=float, ensure_2d=True)
        sys, _, cfg = self._build()
        if X.shape[1] != sys.n_slow:
            raise ValueError(
                f"X has {X.shape[1]} columns but the system has "
                f"{sys.n_slow} slow variables")
        self.n_features_in_ = X.shape[1]
        self.report_ = verdict(sys, cfg.mode, cfg.m, X[0])
        self.spectrum_ = tuple(a.eigenmode for a in self.report_.modes)
        return self

    def transform(self, X) -> np.ndarray:
        """Manifold fast coordinates for each row of slow coordinates.

        Raises
        ------
        SlowManifoldError
            When any row fails to converge within the budget (divergence
            raises its own, more specific error).
        """
        check_is_fitted(self, "report_")
        X = check_array(X, dtype=float, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        sys, _, _ = self._build()
        out = np.empty((X.shape[0], sys.n_fast))
        for i, row in enumerate(X):
            trace = self.project_trace(row)
            if not trace.converged:
                state = "diverged" if trace.diverged else "did not converge"
                raise SlowManifoldError(
                    f"projection at row {i} (x0 = {row.tolist()}) {state} "
                    f"after {trace.iterations_used} iterations")
            out[i] = trace.output
        return out

    def project_trace(self, x0) -> IterationTrace:
        """Full iteration record for one slow point."""
        sys, fm, cfg = self._build()
        if self.use_rpm:
            trace, _ = rpm_iterate(sys, fm, cfg, RpmConfig(delta=self.rpm_delta),
                                   x0)
            return trace
        return project(sys, fm, cfg, x0)
