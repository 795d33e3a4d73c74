"""Functional iteration onto the slow manifold at a frozen slow point.

Given a slow coordinate ``x0``, the map ``F(y) = y - L(x0, y)`` is
iterated on the fast variables alone.  Its fixed points are the zeros
of the correction term ``L``, which approximate the slow manifold value
``h(x0)`` to order ``eps^(m+1)``.  This module runs that iteration with
bookkeeping (trace, convergence and divergence flags), computes an a
posteriori error bound, and chains stages of increasing order into a
cascade that reuses each stage's output as the next seed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, check_options, check_scalar
from .derivatives import DerivativeMode, L_hat, L_m, _check_m
from .exceptions import DegeneracyError, DivergenceError
from .systems import FastSlowSystem, FlowMap, default_flow_map, expand_slow_manifold

__all__ = [
    "IterationConfig",
    "IterationTrace",
    "project",
    "error_bound",
    "project_cascade",
    "DIVERGENCE_FACTOR",
]

#: residual growth beyond this multiple of the initial residual is divergence
DIVERGENCE_FACTOR = 1e6

_SEED_POLICIES = ("user-value", "critical-manifold", "previous-m-output")


@dataclass(frozen=True)
class IterationConfig:
    """Settings of one projection run.

    ``tol`` is the stopping threshold on the correction norm; ``None``
    resolves to ``epsilon^(m+1)``, the accuracy order of the fixed
    point itself.
    """

    m: int
    mode: DerivativeMode
    tol: float | None = None
    max_iters: int = 10000
    seed_policy: str = "user-value"

    def __post_init__(self):
        object.__setattr__(self, "m", _check_m(self.m))
        if self.tol is not None:
            object.__setattr__(self, "tol",
                               check_scalar(self.tol, "tol", positive=True))
        object.__setattr__(self, "max_iters",
                           check_scalar(self.max_iters, "max_iters",
                                        positive=True, integer=True))
        check_options(self.seed_policy, "seed_policy", _SEED_POLICIES)

    def resolve_tol(self, epsilon: float) -> float:
        return self.tol if self.tol is not None else epsilon ** (self.m + 1)


@dataclass(frozen=True)
class IterationTrace:
    """Complete record of one projection run.

    ``iterates[0]`` is the seed and ``residuals[k]`` is the correction
    norm evaluated at ``iterates[k]``, so ``len(residuals) ==
    len(iterates) - 1`` always holds.  ``output`` is the accepted point
    when ``converged`` and ``None`` otherwise.  ``error_bound`` is NaN
    until filled in by :func:`error_bound`.
    """

    x0: np.ndarray
    m: int
    iterates: tuple
    residuals: tuple
    converged: bool
    diverged: bool
    output: np.ndarray | None
    error_bound: float = math.nan

    @property
    def iterations_used(self) -> int:
        return len(self.iterates) - 1


def _correction(sys, fm, cfg, x0):
    """Bind L to the frozen slow point; returns y -> L(x0, y)."""
    if cfg.mode.variant == "analytic-recursive":
        def corr(y):
            return L_m(sys, cfg.mode, cfg.m, np.concatenate((x0, y)))
    else:
        if fm is None:
            raise ValueError("forward-difference mode requires a flow map")
        def corr(y):
            return L_hat(sys, fm, cfg.mode, cfg.m, np.concatenate((x0, y)))
    return corr


def _resolve_seed(sys, cfg, x0, y_seed):
    if y_seed is not None:
        return as_vector(y_seed, "y_seed", size=sys.n_fast)
    if cfg.seed_policy == "critical-manifold":
        return expand_slow_manifold(sys, 0, x0)[0]
    raise ValueError(
        f"seed_policy {cfg.seed_policy!r} requires an explicit y_seed")


def _finish(x0, m, iterates, residuals, converged, diverged):
    return IterationTrace(
        x0=x0, m=m,
        iterates=tuple(iterates), residuals=tuple(residuals),
        converged=converged, diverged=diverged,
        output=iterates[-1].copy() if converged else None)


def project(sys: FastSlowSystem, fm: FlowMap | None, cfg: IterationConfig,
            x0, y_seed=None) -> IterationTrace:
    """Iterate ``y <- y - L(x0, y)`` from a seed until the correction is small.

    Parameters
    ----------
    sys : FastSlowSystem
    fm : FlowMap or None
        Required for forward-difference mode; ignored otherwise.
    cfg : IterationConfig
    x0 : array_like of length n_slow
        Slow coordinate held fixed throughout.
    y_seed : array_like of length n_fast, optional
        Starting fast value; mandatory under the "user-value" policy.

    Returns
    -------
    IterationTrace
        ``converged`` when the correction norm dropped below tolerance
        within the iteration budget; ``diverged`` when it grew by more
        than ``DIVERGENCE_FACTOR`` over its initial value.  Exhausting
        ``max_iters`` without either is reported as a plain
        non-converged trace, not an exception.

    Raises
    ------
    DivergenceError
        When an iterate or the underlying flow stops being finite; the
        partial trace is attached to the exception.
    """
    x0 = as_vector(x0, "x0", size=sys.n_slow)
    y = _resolve_seed(sys, cfg, x0, y_seed)
    tol = cfg.resolve_tol(sys.epsilon)
    corr = _correction(sys, fm, cfg, x0)

    iterates = [y.copy()]
    residuals: list[float] = []
    initial = None
    for _ in range(cfg.max_iters):
        try:
            step = corr(y)
        except DivergenceError as exc:
            trace = _finish(x0, cfg.m, iterates, residuals, False, True)
            raise DivergenceError(
                f"correction term blew up at iteration {len(residuals)}",
                trace=trace) from exc
        resid = float(np.linalg.norm(step))
        if not math.isfinite(resid):
            trace = _finish(x0, cfg.m, iterates, residuals, False, True)
            raise DivergenceError(
                f"non-finite correction at iteration {len(residuals)}",
                trace=trace)
        residuals.append(resid)
        if initial is None:
            initial = resid
        y = y - step
        iterates.append(y.copy())
        if resid < tol:
            return _finish(x0, cfg.m, iterates, residuals, True, False)
        if initial > 0.0 and resid > DIVERGENCE_FACTOR * initial:
            return _finish(x0, cfg.m, iterates, residuals, False, True)
    return _finish(x0, cfg.m, iterates, residuals, False, False)


def error_bound(sys: FastSlowSystem, cfg: IterationConfig,
                trace: IterationTrace, fm: FlowMap | None = None) -> float:
    """A posteriori bound ``|(D_y L)^(-1)| * |L|`` at the accepted point.

    Both factors are evaluated at ``(x0, output)``: the correction norm
    there bounds the distance to the iteration's own fixed point through
    the inverse Jacobian (2-norm).
    """
    if not trace.converged:
        raise ValueError("error bound requires a converged trace")
    if cfg.mode.variant == "forward-difference" and fm is None:
        fm = default_flow_map(sys, cfg.mode.H_hat)
    corr = _correction(sys, fm, cfg, trace.x0)
    y = trace.output
    resid = float(np.linalg.norm(corr(y)))
    h = max(1e-6, math.sqrt(float(np.finfo(float).eps))
            * float(np.linalg.norm(np.concatenate((trace.x0, y)))))
    jac = np.empty((sys.n_fast, sys.n_fast))
    for j in range(sys.n_fast):
        e = np.zeros(sys.n_fast)
        e[j] = h
        jac[:, j] = (corr(y + e) - corr(y - e)) / (2.0 * h)
    try:
        inv = np.linalg.inv(jac)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(
            "correction Jacobian is singular at the accepted point; "
            "no error bound available") from exc
    return float(np.linalg.norm(inv, 2)) * resid


def project_cascade(sys: FastSlowSystem, fm: FlowMap | None,
                    base_cfg: IterationConfig, x0, y_seed=None,
                    m_max: int | None = None) -> tuple:
    """Run projections of increasing order, each seeded by the last output.

    Stage ``m`` runs with tolerance ``tol0 * epsilon^m`` where ``tol0``
    is the base tolerance (``epsilon`` by default, reproducing the
    per-stage default ``epsilon^(m+1)``).  The cascade stops at the
    first stage that fails to converge; that stage's trace (or the
    partial trace of a blow-up) is still included.

    Returns
    -------
    tuple of IterationTrace
        One entry per attempted stage, orders 0..m_max at best.
    """
    if m_max is None:
        m_max = base_cfg.m
    m_max = _check_m(m_max)
    tol0 = base_cfg.tol if base_cfg.tol is not None else sys.epsilon
    traces = []
    seed = y_seed
    policy = base_cfg.seed_policy
    for m in range(m_max + 1):
        cfg = dataclasses.replace(
            base_cfg, m=m, tol=tol0 * sys.epsilon ** m, seed_policy=policy)
        try:
            trace = project(sys, fm, cfg, x0, seed)
        except DivergenceError as exc:
            if exc.trace is not None:
                traces.append(exc.trace)
            break
        traces.append(trace)
        if not trace.converged:
            break
        seed = trace.output
        policy = "previous-m-output"
    return tuple(traces)
