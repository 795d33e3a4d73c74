"""High-order time derivatives of the fast variables along the flow.

The projection iteration is driven by correction terms built from the
(m+1)-th time derivative of ``y``.  Two routes are available:

* ``analytic-recursive``: the derivative is expanded recursively through
  the vector field.  With ``L_0 = -(H/eps) g``, each next level is the
  directional derivative of the previous one along the eps-scaled field,
  times ``-(H/eps)``.  For linear systems this telescopes into exact
  matrix powers; otherwise nested central differences are used.
* ``forward-difference``: the derivative is replaced by an (m+1)-th
  forward difference of ``y`` sampled along a numerically integrated
  trajectory with node spacing ``H_hat``.

Both produce a correction ``L`` with fixed point ``L = 0`` defining the
computed manifold point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_options, check_scalar
from .exceptions import PrecisionLossError
from .systems import FastSlowSystem, FlowMap, _dyg

__all__ = [
    "DerivativeMode",
    "M_MAX",
    "L_m",
    "delta_forward",
    "L_hat",
    "difference_weights",
    "leading_order_check",
]

#: highest supported derivative order exponent; corrections use d^(m+1)y/dt^(m+1)
M_MAX = 4

_MACHINE_EPS = float(np.finfo(float).eps)
#: per-level central-difference step factor, scaled by max(1, |z|)
_NESTED_STEP = _MACHINE_EPS ** (1.0 / 3.0)


@dataclass(frozen=True)
class DerivativeMode:
    """How the correction term is evaluated.

    Parameters
    ----------
    variant : {"analytic-recursive", "forward-difference"}
    H : float
        Pseudo-timestep of the iteration map.
    H_hat : float, optional
        Node spacing of the forward-difference stencil; required for
        (and only meaningful in) the forward-difference variant.  The
        ratio ``eta = H / H_hat`` is the free damping knob.
    """

    variant: str
    H: float
    H_hat: float | None = None

    def __post_init__(self):
        check_options(self.variant, "variant",
                      ("analytic-recursive", "forward-difference"))
        object.__setattr__(self, "H", check_scalar(self.H, "H", positive=True))
        if self.variant == "forward-difference":
            if self.H_hat is None:
                raise ValueError("forward-difference mode requires H_hat")
            object.__setattr__(
                self, "H_hat", check_scalar(self.H_hat, "H_hat", positive=True))
        elif self.H_hat is not None:
            raise ValueError("H_hat is only meaningful in forward-difference mode")

    @property
    def eta(self) -> float:
        if self.H_hat is None:
            raise ValueError("eta is undefined without H_hat")
        return self.H / self.H_hat

    @classmethod
    def analytic(cls, H: float) -> "DerivativeMode":
        return cls(variant="analytic-recursive", H=H)

    @classmethod
    def differenced(cls, H_hat: float, eta: float = 1.0) -> "DerivativeMode":
        eta = check_scalar(eta, "eta", positive=True)
        H_hat = check_scalar(H_hat, "H_hat", positive=True)
        return cls(variant="forward-difference", H=eta * H_hat, H_hat=H_hat)


def _check_m(m) -> int:
    m = check_scalar(m, "m", nonnegative=True, integer=True)
    if m > M_MAX:
        raise ValueError(f"m must be <= {M_MAX}, got {m}")
    return m


def _require_analytic(mode: DerivativeMode, sys: FastSlowSystem):
    if mode.variant != "analytic-recursive":
        raise ValueError(
            f"L_m requires analytic-recursive mode, got {mode.variant!r}; "
            "use L_hat for the forward-difference variant")
    # the recursive expansion is an asymptotic object; huge H only makes
    # sense for the differenced variant, so the cap applies here only
    if mode.H > 10.0 * sys.epsilon:
        raise ValueError(
            f"H = {mode.H} exceeds 10*epsilon = {10.0 * sys.epsilon}; "
            "steps that large are only supported in forward-difference mode")


def _L_nested(sys: FastSlowSystem, H: float, m: int, z: np.ndarray) -> np.ndarray:
    if m == 0:
        x, y = sys.split(z)
        return -(H / sys.epsilon) * sys.g(x, y)
    direction = sys.velocity(z)
    speed = float(np.linalg.norm(direction))
    if speed == 0.0:
        # equilibrium of the full system: all higher derivatives vanish
        return np.zeros(sys.n_fast)
    u = direction / speed
    h = _NESTED_STEP * max(1.0, float(np.linalg.norm(z)))
    zp = z + h * u
    zm = z - h * u
    if np.array_equal(zp, z) or np.array_equal(zm, z):
        raise PrecisionLossError(
            f"central-difference step {h} vanishes against the state at "
            f"nesting level {m}; use forward-difference mode instead")
    dl = (_L_nested(sys, H, m - 1, zp) - _L_nested(sys, H, m - 1, zm)) / (2.0 * h)
    return -(H / sys.epsilon) * speed * dl


def L_m(sys: FastSlowSystem, mode: DerivativeMode, m, z) -> np.ndarray:
    """Analytic-recursive correction term at full state z.

    Returns ``(-H)^(m+1)`` times the (m+1)-th time derivative of ``y``
    along the flow through ``z``, as a vector of length ``n_fast``.
    Linear systems are evaluated exactly through matrix powers; general
    systems through nested directional central differences.
    """
    m = _check_m(m)
    _require_analytic(mode, sys)
    z = np.asarray(z, dtype=float)
    if z.shape != (sys.n_slow + sys.n_fast,):
        raise ValueError(
            f"z must have length {sys.n_slow + sys.n_fast}, got shape {z.shape}")
    if sys.linear_matrix is not None:
        coeff = -mode.H * sys.linear_matrix[sys.n_slow:, :]
        for _ in range(m):
            coeff = -mode.H * (coeff @ sys.linear_matrix)
        return coeff @ z
    return _L_nested(sys, mode.H, m, z)


def difference_weights(m: int) -> np.ndarray:
    """Stencil weights of the (m+1)-th forward difference at nodes 0..m+1.

    Weight ``ell`` is ``(-1)^(m+1-ell) * C(m+1, ell)``; the combination
    annihilates every polynomial in ``ell`` of degree <= m.
    """
    m = _check_m(m)
    return np.array([(-1) ** (m + 1 - ell) * math.comb(m + 1, ell)
                     for ell in range(m + 2)], dtype=float)


def delta_forward(sys: FastSlowSystem, fm: FlowMap, mode: DerivativeMode,
                  m, z) -> np.ndarray:
    """(m+1)-th forward difference of y along the trajectory through z.

    Nodes sit at times ``0, H_hat, ..., (m+1)*H_hat`` on one trajectory
    of the flow map; integer binomial weights keep the combination exact.
    """
    m = _check_m(m)
    if mode.variant != "forward-difference":
        raise ValueError(f"delta_forward requires forward-difference mode, "
                         f"got {mode.variant!r}")
    z = np.asarray(z, dtype=float)
    states = fm.node_states(z, mode.H_hat, m + 1)
    weights = difference_weights(m)
    out = np.zeros(sys.n_fast)
    for w, state in zip(weights, states):
        out += w * state[sys.n_slow:]
    return out


def L_hat(sys: FastSlowSystem, fm: FlowMap, mode: DerivativeMode, m, z) -> np.ndarray:
    """Forward-difference correction term ``(-eta)^(m+1) * delta^(m+1) y``."""
    m = _check_m(m)
    return (-mode.eta) ** (m + 1) * delta_forward(sys, fm, mode, m, z)


def leading_order_check(sys: FastSlowSystem, mode: DerivativeMode, m, z,
                        fm: FlowMap | None = None) -> float:
    """Relative deviation of the correction from its stiff leading term.

    Away from degeneracies the correction is dominated by
    ``(-H/eps)^(m+1) (D_y g)_0^m g_0`` with both factors frozen at
    eps = 0.  Returns ``|L - leading| / |L|``; small values confirm the
    implementation tracks the stiff part of the dynamics, and the value
    grows toward 1 as the state approaches the computed manifold (where
    ``L`` itself is dominated by subleading terms).
    """
    m = _check_m(m)
    z = np.asarray(z, dtype=float)
    x, y = sys.split(z)
    if mode.variant == "analytic-recursive":
        ell = L_m(sys, mode, m, z)
    else:
        if fm is None:
            from .systems import default_flow_map
            fm = default_flow_map(sys, mode.H_hat)
        ell = L_hat(sys, fm, mode, m, z)
    g0 = sys.g(x, y, 0.0)
    dyg0 = _dyg(sys, x, y, 0.0)
    lead = ((-mode.H / sys.epsilon) ** (m + 1)
            * np.linalg.matrix_power(dyg0, m) @ g0)
    denom = float(np.linalg.norm(ell))
    if denom == 0.0:
        return 0.0 if float(np.linalg.norm(lead)) == 0.0 else math.inf
    return float(np.linalg.norm(ell - lead)) / denom
