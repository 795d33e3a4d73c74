"""Stabilized projection for step sizes where plain iteration diverges.

When the iteration map ``F(y) = y - L(x0, y)`` has multipliers on or
outside the unit circle, plain fixed-point iteration is useless even
though the fixed point itself is perfectly good.  The cure is to split
the fast space into the span of the offending modes (dimension ``M``)
and its orthogonal complement: on the complement the map still
contracts and is iterated as-is, while on the low-dimensional unstable
span a Newton step on ``y - F(y)`` is taken.  The split is read off an
ordered real Schur form of a finite-difference Jacobian of ``F`` at the
seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import as_vector, check_scalar
from .exceptions import DivergenceError, NumericalError
from .projector import (DIVERGENCE_FACTOR, IterationConfig, IterationTrace,
                        _correction, _finish, _resolve_seed, project)
from .systems import FastSlowSystem, FlowMap

__all__ = ["RpmConfig", "RpmState", "identify_subspace", "rpm_iterate"]

_MACHINE_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class RpmConfig:
    """Settings of the stabilized iteration.

    ``delta`` is the modulus margin: Jacobian eigenvalues with modulus
    above ``1 - delta`` are treated as slow/unstable and handed to the
    Newton block.  ``refresh_every`` sets how many iterations reuse one
    restricted Jacobian before it is re-estimated (each refresh costs
    ``M + 1`` extra map evaluations).
    """

    delta: float = 0.2
    jacobian_step: float | None = None
    refresh_every: int = 5

    def __post_init__(self):
        delta = check_scalar(self.delta, "delta", positive=True)
        if delta >= 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        object.__setattr__(self, "delta", delta)
        if self.jacobian_step is not None:
            object.__setattr__(
                self, "jacobian_step",
                check_scalar(self.jacobian_step, "jacobian_step", positive=True))
        object.__setattr__(
            self, "refresh_every",
            check_scalar(self.refresh_every, "refresh_every",
                         positive=True, integer=True))


@dataclass(frozen=True)
class RpmState:
    """Final subspace data: orthonormal basis of the handled span (columns
    of ``basis_P``, ``M`` of them) and the output's components ``p`` (in
    the span, coordinates w.r.t. the basis) and ``q`` (the complement part).
    """

    basis_P: np.ndarray
    M: int
    p: np.ndarray
    q: np.ndarray


def identify_subspace(jacobian, cfg: RpmConfig):
    """Orthonormal basis of the dominant invariant subspace of a Jacobian.

    An ordered real Schur decomposition moves every eigenvalue with
    modulus above ``1 - delta`` to the leading block; the corresponding
    leading Schur vectors span the invariant subspace the Newton block
    will handle.  Conjugate pairs are kept together by the real form.

    Returns
    -------
    (basis, M) : ndarray of shape (n, M), int
    """
    jacobian = np.atleast_2d(np.asarray(jacobian, dtype=float))
    n = jacobian.shape[0]
    if jacobian.shape != (n, n):
        raise ValueError(f"jacobian must be square, got {jacobian.shape}")
    cut = 1.0 - cfg.delta
    try:
        _, z, sdim = scipy.linalg.schur(
            jacobian, output="real",
            sort=lambda re, im: math.hypot(re, im) > cut)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Schur decomposition failed: {exc}") from exc
    m = int(sdim)
    if m == n:
        warnings.warn(
            "every iteration mode exceeds the modulus cut; the stabilized "
            "iteration degenerates to a pure Newton method", stacklevel=2)
    return z[:, :m], m


def _fd_jacobian_of_map(fun, y, step):
    n = y.size
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        jac[:, j] = (fun(y + e) - fun(y - e)) / (2.0 * step)
    return jac


def rpm_iterate(sys: FastSlowSystem, fm: FlowMap | None, cfg: IterationConfig,
                rpm_cfg: RpmConfig, x0, y_seed=None):
    """Run the subspace-stabilized projection at a frozen slow point.

    The Jacobian of the iteration map is estimated once at the seed to
    identify the handled subspace; the restricted Newton block is then
    re-estimated every ``refresh_every`` iterations from ``M`` forward
    directional differences.  With ``M = 0`` the plain projection is
    returned unchanged, output bit for bit.

    Returns
    -------
    (trace, state) : IterationTrace, RpmState

    Raises
    ------
    NumericalError
        When the Newton block ``I - P (DF) P`` is singular, which means
        1 is (numerically) an eigenvalue of the restricted Jacobian.
    DivergenceError
        When an iterate stops being finite; partial trace attached.
    """
    x0 = as_vector(x0, "x0", size=sys.n_slow)
    y = _resolve_seed(sys, cfg, x0, y_seed)
    tol = cfg.resolve_tol(sys.epsilon)
    corr = _correction(sys, fm, cfg, x0)

    def f_map(v):
        return v - corr(v)

    h = rpm_cfg.jacobian_step
    if h is None:
        h = max(1e-6, math.sqrt(_MACHINE_EPS)
                * float(np.linalg.norm(np.concatenate((x0, y)))))
    jac = _fd_jacobian_of_map(f_map, y, h)
    basis, m_dim = identify_subspace(jac, rpm_cfg)

    if m_dim == 0:
        trace = project(sys, fm, cfg, x0, y)
        out = trace.output if trace.output is not None else trace.iterates[-1]
        state = RpmState(basis_P=basis, M=0, p=np.zeros(0), q=out.copy())
        return trace, state

    vt = basis.T
    newton_block = None
    iterates = [y.copy()]
    residuals: list[float] = []
    initial = None
    f_y = None
    for r in range(cfg.max_iters):
        try:
            f_y = f_map(y)
            if r % rpm_cfg.refresh_every == 0:
                # directional forward differences refresh only the
                # restricted block, M map evaluations on top of f_y
                w = np.empty((y.size, m_dim))
                for j in range(m_dim):
                    w[:, j] = (f_map(y + h * basis[:, j]) - f_y) / h
                newton_block = np.eye(m_dim) - vt @ w
        except DivergenceError as exc:
            trace = _finish(x0, cfg.m, iterates, residuals, False, True)
            raise DivergenceError(
                f"iteration map blew up at iteration {r}", trace=trace) from exc
        resid_vec = f_y - y
        resid = float(np.linalg.norm(resid_vec))
        if not math.isfinite(resid):
            trace = _finish(x0, cfg.m, iterates, residuals, False, True)
            raise DivergenceError(
                f"non-finite iterate at iteration {r}", trace=trace)
        residuals.append(resid)
        if initial is None:
            initial = resid
        try:
            c = np.linalg.solve(newton_block, vt @ resid_vec)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "Newton block is singular: 1 is an eigenvalue of the "
                "restricted Jacobian P (DF) P") from exc
        p_coords = vt @ y + c
        q_part = f_y - basis @ (vt @ f_y)
        y = basis @ p_coords + q_part
        iterates.append(y.copy())
        if resid < tol:
            trace = _finish(x0, cfg.m, iterates, residuals, True, False)
            break
        if initial > 0.0 and resid > DIVERGENCE_FACTOR * initial:
            trace = _finish(x0, cfg.m, iterates, residuals, False, True)
            break
    else:
        trace = _finish(x0, cfg.m, iterates, residuals, False, False)
    out = trace.output if trace.output is not None else trace.iterates[-1]
    state = RpmState(basis_P=basis, M=m_dim,
                     p=vt @ out, q=out - basis @ (vt @ out))
    return trace, state
