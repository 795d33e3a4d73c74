"""Closed-form stability of the projection iterations, mode by mode.

For a fast Jacobian eigenvalue ``lambda = |lambda| e^(i theta)`` (Hurwitz,
so ``theta`` lies in the open left-half-plane band ``(pi/2, 3*pi/2)``),
the linearized iteration multiplies the corresponding mode by a factor
``mu`` that is known exactly:

* analytic-recursive:  ``mu = 1 - (|lambda| H / eps)^(m+1) e^(i(m+1)(theta-pi))``,
* forward-difference:  ``mu_hat = 1 - eta^(m+1) (1 - e^(-s(1+i tan theta)))^(m+1)``
  with ``s = |Re lambda| H_hat / eps`` the decay per stencil node.

Everything else here is bookkeeping around these two formulas: which
angles admit any stable step (sectors), the largest stable step, step
bounds that hold uniformly in the angle, rasterized stability regions,
and a per-system verdict that applies the formulas to the actual fast
spectrum.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_options, check_scalar
from .derivatives import DerivativeMode, _check_m, difference_weights
from .exceptions import TangentSingularityError
from .systems import FastSlowSystem, _dyg, expand_slow_manifold

__all__ = [
    "EigenMode",
    "ModeAssessment",
    "StabilityReport",
    "RegionRaster",
    "spectrum_at",
    "mu",
    "in_sector",
    "h_max",
    "mu_hat",
    "uniform_bound",
    "eta_critical",
    "boundary_residual",
    "raster_region",
    "verdict",
]

_HALF_PI = math.pi / 2.0
_THREE_HALF_PI = 3.0 * math.pi / 2.0
#: angles this close to +-pi/2 have no usable tan(theta)
_TANGENT_GUARD = 1e-9


@dataclass(frozen=True)
class EigenMode:
    """One fast-Jacobian eigenvalue in the open left half plane."""

    lambda_re: float
    lambda_im: float

    def __post_init__(self):
        object.__setattr__(self, "lambda_re",
                           check_scalar(self.lambda_re, "lambda_re"))
        object.__setattr__(self, "lambda_im",
                           check_scalar(self.lambda_im, "lambda_im"))
        if self.lambda_re >= 0.0:
            raise ValueError(
                f"eigenvalue {self.lambda_re} + {self.lambda_im}j is not "
                "Hurwitz; the critical manifold is not attracting here")

    @property
    def modulus(self) -> float:
        return math.hypot(self.lambda_re, self.lambda_im)

    @property
    def angle(self) -> float:
        """Argument measured in (pi/2, 3*pi/2)."""
        a = math.atan2(self.lambda_im, self.lambda_re)
        return a + 2.0 * math.pi if a < 0.0 else a

    @classmethod
    def from_complex(cls, value) -> "EigenMode":
        value = complex(value)
        return cls(lambda_re=value.real, lambda_im=value.imag)

    @classmethod
    def from_polar(cls, modulus: float, angle: float) -> "EigenMode":
        modulus = check_scalar(modulus, "modulus", positive=True)
        angle = _check_angle(angle)
        return cls(lambda_re=modulus * math.cos(angle),
                   lambda_im=modulus * math.sin(angle))


def _check_angle(theta) -> float:
    theta = check_scalar(theta, "theta")
    if not (_HALF_PI < theta < _THREE_HALF_PI):
        raise ValueError(
            f"theta must lie in (pi/2, 3*pi/2), got {theta}")
    return theta


def spectrum_at(sys: FastSlowSystem, x0) -> tuple:
    """Fast-Jacobian eigenvalues at the critical manifold point over x0.

    Evaluates ``D_y g`` at ``(x0, h0(x0), 0)`` and returns one
    :class:`EigenMode` per eigenvalue, sorted by (real, imag) for
    determinism.  Raises ``ValueError`` when any eigenvalue fails to be
    Hurwitz, since none of the stability formulas apply there.
    """
    h0 = expand_slow_manifold(sys, 0, x0)[0]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    jac = _dyg(sys, x0, h0, 0.0)
    eigs = sorted(np.linalg.eigvals(jac), key=lambda v: (v.real, v.imag))
    return tuple(EigenMode.from_complex(v) for v in eigs)


# -- analytic-recursive variant ----------------------------------------------

def mu(m, H: float, epsilon: float, mode: EigenMode) -> complex:
    """Exact per-mode multiplier of the analytic-recursive iteration."""
    m = _check_m(m)
    H = check_scalar(H, "H", positive=True)
    epsilon = check_scalar(epsilon, "epsilon", positive=True)
    r = mode.modulus * H / epsilon
    return 1.0 - r ** (m + 1) * cmath.exp(1j * (m + 1) * (mode.angle - math.pi))


def in_sector(m, theta) -> bool:
    """Whether any step size stabilizes a mode at this angle.

    The admissible angles form ``m + 1`` open arcs; the k-th arc is
    ``((2m+4k+1) pi / (2(m+1)), (2m+4k+3) pi / (2(m+1)))`` and the test
    accepts ``theta`` if either ``theta`` or ``theta + 2 pi`` falls in
    one of them.
    """
    m = _check_m(m)
    theta = _check_angle(theta)
    width = 2.0 * (m + 1)
    for k in range(m + 1):
        lo = (2 * m + 4 * k + 1) * math.pi / width
        hi = (2 * m + 4 * k + 3) * math.pi / width
        if lo < theta < hi or lo < theta + 2.0 * math.pi < hi:
            return True
    return False


def h_max(m, theta, epsilon: float, modulus: float = 1.0):
    """Largest stable step of the analytic-recursive iteration.

    Returns ``(eps/|lambda|) * (2 cos((m+1)(theta-pi)))^(1/(m+1))``, or
    ``None`` when the angle lies outside every stable sector.
    """
    m = _check_m(m)
    theta = _check_angle(theta)
    epsilon = check_scalar(epsilon, "epsilon", positive=True)
    modulus = check_scalar(modulus, "modulus", positive=True)
    if not in_sector(m, theta):
        return None
    c = math.cos((m + 1) * (theta - math.pi))
    return (epsilon / modulus) * (2.0 * c) ** (1.0 / (m + 1))


# -- forward-difference variant -----------------------------------------------

def _check_tangent(theta) -> float:
    theta = _check_angle(theta)
    if (abs(theta - _HALF_PI) < _TANGENT_GUARD
            or abs(theta - _THREE_HALF_PI) < _TANGENT_GUARD):
        raise TangentSingularityError(
            f"theta = {theta} is too close to an imaginary-axis angle; "
            "tan(theta) overflows")
    return theta


def mu_hat(m, step: float, theta, eta: float = 1.0) -> complex:
    """Exact per-mode multiplier of the forward-difference iteration.

    ``step`` is the per-node decay exponent ``|Re lambda| H_hat / eps``
    of the mode, so the stencil samples the mode at geometric weights
    ``e^(-k step)``.
    """
    m = _check_m(m)
    step = check_scalar(step, "step", positive=True)
    theta = _check_tangent(theta)
    eta = check_scalar(eta, "eta", positive=True)
    w = 1.0 - cmath.exp(-step * (1.0 + 1j * math.tan(theta)))
    return 1.0 - eta ** (m + 1) * w ** (m + 1)


def uniform_bound(m, eta: float = 1.0) -> float:
    """Angle-independent threshold on the per-node decay exponent.

    For ``eta`` below ``2^(1/(m+1))`` the iteration is stable for every
    angle once the decay exponent exceeds the returned value; at the
    critical ``eta`` no such step exists (``inf``); above it the same
    expression is the onset beyond which the iteration is unstable for
    every angle instead.
    """
    m = _check_m(m)
    eta = check_scalar(eta, "eta", positive=True)
    root2 = 2.0 ** (1.0 / (m + 1))
    if eta <= 1.0:
        return -math.log(root2 - 1.0)
    arg = abs(root2 / eta - 1.0)
    if arg == 0.0:
        return math.inf
    return -math.log(arg)


def eta_critical(m) -> float:
    """Damping ratio above which large steps are unconditionally unstable."""
    m = _check_m(m)
    return 2.0 ** (1.0 / (m + 1))


def _residual_eta1(m: int, step: float, tan_theta: float) -> float:
    # |mu_hat|^2 - 1 with eta = 1: only the quadratic stencil sums survive;
    # the k-th mode sample carries weight +-C(m+1, k), k = 1..m+1, and the
    # global sign squares away
    coeff = difference_weights(m)[1:]
    k = np.arange(1, m + 2, dtype=float)
    total = float(np.sum(coeff ** 2 * np.exp(-2.0 * k * step)))
    for j in range(1, m + 2):
        for i in range(j + 1, m + 2):
            total += (2.0 * coeff[i - 1] * coeff[j - 1]
                      * math.exp(-(i + j) * step)
                      * math.cos((i - j) * step * tan_theta))
    return total - 1.0


def _residual_general(m: int, step: float, tan_theta: float, eta: float) -> float:
    # |mu_hat|^2 - 1 through explicit cosine sums; independent arithmetic
    # from the complex-exponential route in mu_hat
    em1 = eta ** (m + 1)
    c = np.array([math.comb(m + 1, k) for k in range(m + 2)], dtype=float)
    total = (1.0 - em1) ** 2
    for k in range(1, m + 2):
        total += (2.0 * em1 * (em1 - 1.0) * c[k] * (-1.0) ** k
                  * math.exp(-k * step) * math.cos(k * step * tan_theta))
    for k in range(1, m + 2):
        total += em1 ** 2 * c[k] ** 2 * math.exp(-2.0 * k * step)
    for k in range(1, m + 2):
        for j in range(k + 1, m + 2):
            total += (2.0 * em1 ** 2 * c[j] * c[k] * (-1.0) ** (j + k)
                      * math.exp(-(j + k) * step)
                      * math.cos((j - k) * step * tan_theta))
    return total - 1.0


def boundary_residual(m, step: float, theta, eta: float = 1.0) -> float:
    """Signed distance ``|mu_hat|^2 - 1`` evaluated through real sums.

    Negative inside the stability region, zero on its boundary.  The
    arithmetic route (binomial cosine sums) is deliberately different
    from :func:`mu_hat`, so agreement between the two is a genuine
    cross-check of the multiplier formula.
    """
    m = _check_m(m)
    step = check_scalar(step, "step", positive=True)
    theta = _check_tangent(theta)
    eta = check_scalar(eta, "eta", positive=True)
    if eta == 1.0:
        return _residual_eta1(m, step, math.tan(theta))
    return _residual_general(m, step, math.tan(theta), eta)


# -- rasterized regions and the per-system verdict ----------------------------

@dataclass(frozen=True)
class RegionRaster:
    """Stability region sampled on an angle-by-step grid.

    ``abs_mu[i, j]`` is the multiplier modulus at ``thetas[i]``,
    ``steps[j]``; ``stable`` is the strict sublevel set ``abs_mu < 1``.
    """

    variant: str
    m: int
    eta: float | None
    thetas: np.ndarray
    steps: np.ndarray
    abs_mu: np.ndarray
    stable: np.ndarray

    def iter_rows(self):
        """Yield (theta, step, abs_mu, stable) in row-major grid order."""
        for i, theta in enumerate(self.thetas):
            for j, step in enumerate(self.steps):
                yield theta, step, float(self.abs_mu[i, j]), bool(self.stable[i, j])


def raster_region(m, theta_range, step_range, resolution: int = 64,
                  eta: float = 1.0, variant: str = "forward-difference") -> RegionRaster:
    """Sample the closed-form multiplier modulus on a rectangular grid.

    ``step`` means ``|lambda| H / eps`` for the analytic-recursive
    variant and ``|Re lambda| H_hat / eps`` for the forward-difference
    one.  Angles too close to ``pi/2`` or ``3*pi/2`` must be excluded by
    the range for the differenced variant.
    """
    m = _check_m(m)
    check_options(variant, "variant", ("analytic-recursive", "forward-difference"))
    resolution = check_scalar(resolution, "resolution", positive=True, integer=True)
    t_lo = _check_angle(theta_range[0])
    t_hi = _check_angle(theta_range[1])
    s_lo = check_scalar(step_range[0], "step_range[0]", positive=True)
    s_hi = check_scalar(step_range[1], "step_range[1]", positive=True)
    if not (t_lo < t_hi and s_lo < s_hi):
        raise ValueError("theta_range and step_range must be increasing")
    thetas = np.linspace(t_lo, t_hi, resolution)
    steps = np.linspace(s_lo, s_hi, resolution)
    abs_mu = np.empty((resolution, resolution))
    for i, theta in enumerate(thetas):
        for j, step in enumerate(steps):
            if variant == "analytic-recursive":
                val = mu(m, step, 1.0, EigenMode.from_polar(1.0, theta))
            else:
                val = mu_hat(m, step, theta, eta)
            abs_mu[i, j] = abs(val)
    return RegionRaster(variant=variant, m=m,
                        eta=eta if variant == "forward-difference" else None,
                        thetas=thetas, steps=steps,
                        abs_mu=abs_mu, stable=abs_mu < 1.0)


@dataclass(frozen=True)
class ModeAssessment:
    """Stability verdict for one fast eigenvalue."""

    eigenmode: EigenMode
    multiplier: complex
    stable: bool
    in_stable_sector: bool | None = None
    h_max: float | None = None
    decay_exponent: float | None = None


@dataclass(frozen=True)
class StabilityReport:
    """All per-mode multipliers plus the aggregate verdict.

    ``uniform_step_bound`` and ``instability_onset`` are absolute
    ``H_hat`` values (forward-difference variant only); the latter is
    set when ``eta`` exceeds its critical value and means every larger
    stencil spacing is unstable regardless of angles.
    """

    m: int
    variant: str
    eta: float | None
    modes: tuple
    stable: bool
    uniform_step_bound: float | None = None
    instability_onset: float | None = None


def verdict(sys: FastSlowSystem, mode: DerivativeMode, m, x0) -> StabilityReport:
    """Evaluate the closed-form multipliers on the actual fast spectrum.

    The spectrum is taken at the critical-manifold point over ``x0``.
    The report is strict: marginal modes (``|mu| = 1``) count as
    unstable.
    """
    m = _check_m(m)
    spectrum = spectrum_at(sys, x0)
    eps = sys.epsilon
    assessments = []
    if mode.variant == "analytic-recursive":
        for em in spectrum:
            mult = mu(m, mode.H, eps, em)
            assessments.append(ModeAssessment(
                eigenmode=em, multiplier=mult, stable=abs(mult) < 1.0,
                in_stable_sector=in_sector(m, em.angle),
                h_max=h_max(m, em.angle, eps, em.modulus)))
        return StabilityReport(
            m=m, variant=mode.variant, eta=None, modes=tuple(assessments),
            stable=all(a.stable for a in assessments))
    eta = mode.eta
    for em in spectrum:
        s = abs(em.lambda_re) * mode.H_hat / eps
        mult = mu_hat(m, s, em.angle, eta)
        assessments.append(ModeAssessment(
            eigenmode=em, multiplier=mult, stable=abs(mult) < 1.0,
            decay_exponent=s))
    bound = uniform_bound(m, eta)
    uniform_step = None
    onset = None
    if math.isfinite(bound):
        if eta < eta_critical(m):
            uniform_step = eps * bound / min(abs(em.lambda_re) for em in spectrum)
        else:
            onset = eps * bound / max(abs(em.lambda_re) for em in spectrum)
    return StabilityReport(
        m=m, variant=mode.variant, eta=eta, modes=tuple(assessments),
        stable=all(a.stable for a in assessments),
        uniform_step_bound=uniform_step,
        instability_onset=onset)
