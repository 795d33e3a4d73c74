"""Fast-slow systems, their flow maps, and reference slow manifolds.

A fast-slow system in explicit form couples slow variables ``x`` (the
observables, dimension ``n_slow``) to fast variables ``y`` (dimension
``n_fast``) through

    x' = f(x, y, eps),        eps * y' = g(x, y, eps),

with a small timescale ratio ``eps``.  For attracting dynamics the fast
variables relax onto a slow manifold ``y = h(x)``; everything else in
this package computes points of that manifold or decides when the
computation converges.  This module holds the system container, a
fixed-step RK4 flow map (with an exact-propagator shortcut for linear
systems), built-in test systems with known manifolds, and the
low-order asymptotic expansion of ``h``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ._validation import as_vector, check_epsilon, check_options, check_scalar
from .exceptions import DegeneracyError, DivergenceError, RootFindError

__all__ = [
    "FastSlowSystem",
    "SystemJacobians",
    "ReferenceManifold",
    "FlowMap",
    "flow",
    "linear_test",
    "michaelis_menten",
    "complex_pair_test",
    "expand_slow_manifold",
    "invariance_residual",
    "make_system",
    "default_flow_map",
    "SYSTEM_PARAMETERS",
]

_MACHINE_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class SystemJacobians:
    """Analytic Jacobian callables, each with signature (x, y, eps)."""

    dxg: Callable | None = None
    dyg: Callable | None = None
    deg: Callable | None = None
    df: Callable | None = None


@dataclass(frozen=True, eq=False)
class ReferenceManifold:
    """A known slow manifold used as a validation oracle.

    Parameters
    ----------
    kind : {"exact-closed-form", "matrix-power-oracle", "asymptotic-expansion"}
        How the reference was obtained.
    domain : ndarray of shape (n_slow, 2)
        Box in x-space on which the reference is trusted.
    h_terms : tuple of callables
        Coefficients of the eps-expansion of ``h``; ``h_terms[i]`` maps
        ``x`` to the i-th order term.
    h_exact : callable, optional
        Closed-form ``h(x)`` (kind "exact-closed-form" only).
    h_iterate : callable, optional
        Map ``(m, x) -> y`` giving the exact fixed point targeted by the
        order-m iteration (kind "matrix-power-oracle" only).
    """

    kind: str
    domain: np.ndarray
    h_terms: tuple = ()
    h_exact: Callable | None = None
    h_iterate: Callable | None = None

    def __post_init__(self):
        check_options(self.kind, "kind", (
            "exact-closed-form", "matrix-power-oracle", "asymptotic-expansion"))
        object.__setattr__(self, "domain", np.atleast_2d(np.asarray(self.domain, dtype=float)))

    def evaluate(self, x, epsilon=None):
        """Best available value of h(x): exact if known, else the expansion."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.h_exact is not None:
            return np.atleast_1d(np.asarray(self.h_exact(x), dtype=float))
        if not self.h_terms:
            raise ValueError("reference manifold has neither closed form nor expansion terms")
        if epsilon is None:
            raise ValueError("epsilon required to evaluate an asymptotic expansion")
        total = np.zeros_like(np.atleast_1d(np.asarray(self.h_terms[0](x), dtype=float)))
        for i, term in enumerate(self.h_terms):
            total = total + (epsilon ** i) * np.atleast_1d(np.asarray(term(x), dtype=float))
        return total


@dataclass(frozen=True, eq=False)
class FastSlowSystem:
    """Explicit fast-slow system x' = f, eps*y' = g.

    ``f_eval`` and ``g_eval`` take (x, y, eps) and return arrays of
    length n_slow and n_fast.  ``linear_matrix``, when present, is the
    full state matrix A with z' = A z for z = (x, y); it unlocks exact
    derivative recursions and exact flow propagators.
    """

    n_slow: int
    n_fast: int
    epsilon: float
    f_eval: Callable
    g_eval: Callable
    jacobians: SystemJacobians | None = None
    linear_matrix: np.ndarray | None = None
    reference: ReferenceManifold | None = None
    oracle: ReferenceManifold | None = None
    label: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "n_slow",
                           check_scalar(self.n_slow, "n_slow", positive=True, integer=True))
        object.__setattr__(self, "n_fast",
                           check_scalar(self.n_fast, "n_fast", positive=True, integer=True))
        object.__setattr__(self, "epsilon", check_epsilon(self.epsilon))
        if self.linear_matrix is not None:
            n = self.n_slow + self.n_fast
            a = np.asarray(self.linear_matrix, dtype=float)
            if a.shape != (n, n):
                raise ValueError(f"linear_matrix must be {n}x{n}, got {a.shape}")
            object.__setattr__(self, "linear_matrix", a)

    # -- evaluation helpers -------------------------------------------------

    def f(self, x, y):
        return np.atleast_1d(np.asarray(self.f_eval(x, y, self.epsilon), dtype=float))

    def g(self, x, y, epsilon=None):
        eps = self.epsilon if epsilon is None else epsilon
        return np.atleast_1d(np.asarray(self.g_eval(x, y, eps), dtype=float))

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.n_slow], z[self.n_slow:]

    def rhs(self, z):
        """Full state derivative z' = (f, g/eps)."""
        x, y = self.split(z)
        return np.concatenate((self.f(x, y), self.g(x, y) / self.epsilon))

    def velocity(self, z):
        """The eps-scaled field (eps*f, g); the natural scale of one fast time unit."""
        x, y = self.split(z)
        return np.concatenate((self.epsilon * self.f(x, y), self.g(x, y)))


def _rk4_step(rhs, z, h):
    k1 = rhs(z)
    k2 = rhs(z + 0.5 * h * k1)
    k3 = rhs(z + 0.5 * h * k2)
    k4 = rhs(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_propagator(a, h):
    # one RK4 step on z' = A z is exactly z <- R z with R the degree-4
    # Taylor polynomial of exp(hA)
    n = a.shape[0]
    r = np.eye(n)
    term = np.eye(n)
    for j in range(1, 5):
        term = term @ (h * a) / j
        r = r + term
    return r


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Fixed-step RK4 flow of a fast-slow system.

    The step must resolve the fast timescale: ``step <= epsilon`` is
    enforced.  For systems carrying ``linear_matrix`` the stepping is
    done with the (identical) one-step RK4 propagator matrix, and
    repeated horizons reuse cached matrix powers.
    """

    system: FastSlowSystem
    step: float
    scheme: str = "rk4"
    _propagators: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        check_options(self.scheme, "scheme", ("rk4",))
        step = check_scalar(self.step, "step", positive=True)
        if step > self.system.epsilon:
            raise ValueError(
                f"integrator step {step} exceeds epsilon = {self.system.epsilon}; "
                "the flow map must resolve the fast timescale")
        object.__setattr__(self, "step", step)

    def _substeps(self, t):
        return max(1, int(math.ceil(t / self.step - 1e-12)))

    def _propagator(self, t):
        key = float(t)
        cached = self._propagators.get(key)
        if cached is None:
            n = self._substeps(t)
            r = _rk4_propagator(self.system.linear_matrix, t / n)
            cached = np.linalg.matrix_power(r, n)
            self._propagators[key] = cached
        return cached

    def advance(self, z, t):
        """Integrate z forward by time t >= 0."""
        z = np.asarray(z, dtype=float)
        t = check_scalar(t, "t", nonnegative=True)
        if t == 0.0:
            return z.copy()
        if self.system.linear_matrix is not None:
            out = self._propagator(t) @ z
            if not np.all(np.isfinite(out)):
                raise DivergenceError(
                    f"flow diverged integrating over t = {t}",
                    step_index=self._substeps(t))
            return out
        n = self._substeps(t)
        h = t / n
        for i in range(n):
            z = _rk4_step(self.system.rhs, z, h)
            if not np.all(np.isfinite(z)):
                raise DivergenceError(
                    f"non-finite state at integration step {i + 1} of {n}",
                    step_index=i + 1)
        return z

    def node_states(self, z, dt, count):
        """States at times 0, dt, ..., count*dt along one trajectory.

        One progressive pass: each leg continues from the previous node,
        so a call costs count leg integrations, not count*(count+1)/2.
        """
        z = np.asarray(z, dtype=float)
        states = [z.copy()]
        if self.system.linear_matrix is not None:
            p = self._propagator(dt)
            for _ in range(count):
                nxt = p @ states[-1]
                if not np.all(np.isfinite(nxt)):
                    raise DivergenceError(
                        f"flow diverged integrating over t = {dt}",
                        step_index=len(states))
                states.append(nxt)
            return states
        for _ in range(count):
            states.append(self.advance(states[-1], dt))
        return states


def flow(fm: FlowMap, z, t):
    """Evaluate the flow map phi(z; t)."""
    return fm.advance(z, t)


def default_flow_map(sys: FastSlowSystem, h_hat: float | None = None) -> FlowMap:
    """Default integrator step: min(eps, H_hat)/4."""
    step = sys.epsilon if h_hat is None else min(sys.epsilon, h_hat)
    return FlowMap(sys, step / 4.0)


# -- finite-difference fallbacks --------------------------------------------

def _fd_step(scale):
    return max(1e-6, math.sqrt(_MACHINE_EPS) * scale)


def _fd_jacobian(fun, v, step=None):
    """Central-difference Jacobian of fun at v, one column per component."""
    v = np.asarray(v, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(v), dtype=float))
    jac = np.empty((f0.size, v.size))
    for j in range(v.size):
        h = step if step is not None else _fd_step(np.linalg.norm(v))
        e = np.zeros_like(v)
        e[j] = h
        jac[:, j] = (np.atleast_1d(fun(v + e)) - np.atleast_1d(fun(v - e))) / (2.0 * h)
    return jac


def _dyg(sys, x, y, epsilon):
    if sys.jacobians is not None and sys.jacobians.dyg is not None:
        return np.atleast_2d(np.asarray(sys.jacobians.dyg(x, y, epsilon), dtype=float))
    return _fd_jacobian(lambda v: sys.g_eval(x, v, epsilon), y)


def _dxg(sys, x, y, epsilon):
    if sys.jacobians is not None and sys.jacobians.dxg is not None:
        return np.atleast_2d(np.asarray(sys.jacobians.dxg(x, y, epsilon), dtype=float))
    return _fd_jacobian(lambda v: sys.g_eval(v, y, epsilon), x)


def _deg(sys, x, y, epsilon):
    if sys.jacobians is not None and sys.jacobians.deg is not None:
        return np.atleast_1d(np.asarray(sys.jacobians.deg(x, y, epsilon), dtype=float))
    h = _fd_step(abs(epsilon))
    ge = np.atleast_1d(np.asarray(sys.g_eval(x, y, epsilon + h), dtype=float))
    gm = np.atleast_1d(np.asarray(sys.g_eval(x, y, epsilon - h), dtype=float))
    return (ge - gm) / (2.0 * h)


# -- asymptotic expansion of the slow manifold -------------------------------

def expand_slow_manifold(sys: FastSlowSystem, order: int, x, y_guess=None):
    """Leading terms of the eps-expansion of the slow manifold at x.

    Term 0 solves ``g(x, y, 0) = 0`` by damped Newton iteration; term 1
    solves the linear order-eps matching condition

        (D_y g)_0 h1 = (D h0) f_0 - (D_eps g)_0

    with every factor evaluated at (x, h0(x), 0) and D h0 obtained by
    implicit differentiation of g = 0.

    Parameters
    ----------
    sys : FastSlowSystem
    order : {0, 1}
        Highest expansion term to compute.
    x : array_like of length n_slow
    y_guess : array_like, optional
        Newton seed for the critical-manifold root; zeros by default.

    Returns
    -------
    list of ndarray
        ``[h0]`` for order 0, ``[h0, h1]`` for order 1.
    """
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    x = as_vector(x, "x", size=sys.n_slow)
    y = (np.zeros(sys.n_fast) if y_guess is None
         else as_vector(y_guess, "y_guess", size=sys.n_fast))

    # damped Newton on g(x, ., 0)
    res = sys.g(x, y, 0.0)
    res_norm = float(np.linalg.norm(res))
    tol = 1e-12 * (1.0 + float(np.linalg.norm(y)))
    for _ in range(50):
        if res_norm <= tol:
            break
        jac = _dyg(sys, x, y, 0.0)
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError(
                "singular (D_y g) at eps = 0; critical manifold is not "
                "normally hyperbolic here") from exc
        damping = 1.0
        for _ in range(20):
            y_new = y - damping * step
            res_new = sys.g(x, y_new, 0.0)
            if np.linalg.norm(res_new) < res_norm:
                break
            damping *= 0.5
        else:
            raise RootFindError(
                f"Newton damping exhausted at residual {res_norm:.3e}")
        y, res = y_new, res_new
        res_norm = float(np.linalg.norm(res))
        tol = 1e-12 * (1.0 + float(np.linalg.norm(y)))
    else:
        raise RootFindError(
            f"critical-manifold root not found in 50 Newton steps "
            f"(residual {res_norm:.3e})")

    terms = [y]
    if order == 1:
        dyg0 = _dyg(sys, x, y, 0.0)
        dxg0 = _dxg(sys, x, y, 0.0)
        deg0 = _deg(sys, x, y, 0.0)
        f0 = np.atleast_1d(np.asarray(sys.f_eval(x, y, 0.0), dtype=float))
        try:
            dh0 = -np.linalg.solve(dyg0, dxg0)
            h1 = np.linalg.solve(dyg0, dh0 @ f0 - deg0)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("singular (D_y g)_0 in order-1 expansion") from exc
        terms.append(h1)
    return terms


def invariance_residual(sys: FastSlowSystem, manifold, x, fd_step=1e-6):
    """Defect g(x,h,eps) - eps*Dh(x)*f(x,h,eps) of a candidate graph y = manifold(x)."""
    x = as_vector(x, "x", size=sys.n_slow)
    y = np.atleast_1d(np.asarray(manifold(x), dtype=float))
    dh = _fd_jacobian(lambda v: manifold(v), x, step=fd_step)
    defect = sys.g(x, y) - sys.epsilon * (dh @ sys.f(x, y))
    return float(np.linalg.norm(defect))


# -- built-in systems ---------------------------------------------------------

def linear_test(a: float, c: float, epsilon: float) -> FastSlowSystem:
    """Scalar-coupled linear test system x' = a*x, eps*y' = -(y - c*x).

    Everything about it is known in closed form: the slow manifold is
    ``h(x) = c*x / (1 + eps*a)``, and the fixed point targeted by the
    order-m iteration solves ``e2^T A^(m+1) (x, y)^T = 0`` for the state
    matrix ``A = [[a, 0], [c/eps, -1/eps]]``.  Both are attached as
    reference oracles.
    """
    a = check_scalar(a, "a")
    c = check_scalar(c, "c")
    epsilon = check_epsilon(epsilon)
    if abs(1.0 + epsilon * a) < 1e-12:
        raise ValueError(
            f"degenerate parameters: 1 + epsilon*a = 0 for a={a}, epsilon={epsilon}")

    amat = np.array([[a, 0.0], [c / epsilon, -1.0 / epsilon]])

    def f_eval(x, y, eps):
        return np.array([a * x[0]])

    def g_eval(x, y, eps):
        return np.array([c * x[0] - y[0]])

    jac = SystemJacobians(
        dxg=lambda x, y, eps: np.array([[c]]),
        dyg=lambda x, y, eps: np.array([[-1.0]]),
        deg=lambda x, y, eps: np.array([0.0]),
        df=lambda x, y, eps: np.array([[a, 0.0]]),
    )

    def h_exact(x):
        return np.array([c * x[0] / (1.0 + epsilon * a)])

    def h_iterate(m, x):
        row = np.linalg.matrix_power(amat, m + 1)[1]
        return np.array([-row[0] * np.atleast_1d(x)[0] / row[1]])

    domain = np.array([[-10.0, 10.0]])
    reference = ReferenceManifold(
        kind="exact-closed-form",
        domain=domain,
        h_terms=(lambda x: np.array([c * x[0]]),
                 lambda x: np.array([-a * c * x[0]])),
        h_exact=h_exact,
    )
    oracle = ReferenceManifold(
        kind="matrix-power-oracle", domain=domain, h_iterate=h_iterate)
    return FastSlowSystem(
        n_slow=1, n_fast=1, epsilon=epsilon, f_eval=f_eval, g_eval=g_eval,
        jacobians=jac, linear_matrix=amat, reference=reference, oracle=oracle,
        label="linear")


def michaelis_menten(kappa: float, lam: float, epsilon: float) -> FastSlowSystem:
    """Dimensionless two-variable enzyme kinetics system.

    Substrate s and complex c evolve by

        s' = -s + (s + kappa - lam) * c,
        eps * c' = s - (s + kappa) * c,

    with kappa, lam > 0.  The critical manifold is c = s/(s + kappa);
    higher expansion terms come from :func:`expand_slow_manifold` and
    are attached as an asymptotic reference.
    """
    kappa = check_scalar(kappa, "kappa", positive=True)
    lam = check_scalar(lam, "lam", positive=True)
    epsilon = check_epsilon(epsilon)

    def f_eval(x, y, eps):
        s, = x
        return np.array([-s + (s + kappa - lam) * y[0]])

    def g_eval(x, y, eps):
        s, = x
        return np.array([s - (s + kappa) * y[0]])

    jac = SystemJacobians(
        dxg=lambda x, y, eps: np.array([[1.0 - y[0]]]),
        dyg=lambda x, y, eps: np.array([[-(x[0] + kappa)]]),
        deg=lambda x, y, eps: np.array([0.0]),
        df=lambda x, y, eps: np.array([[-1.0 + y[0], x[0] + kappa - lam]]),
    )

    sys_bare = FastSlowSystem(
        n_slow=1, n_fast=1, epsilon=epsilon, f_eval=f_eval, g_eval=g_eval,
        jacobians=jac, label="mm")

    def h0(x):
        return expand_slow_manifold(sys_bare, 0, x)[0]

    def h1(x):
        return expand_slow_manifold(sys_bare, 1, x)[1]

    reference = ReferenceManifold(
        kind="asymptotic-expansion",
        domain=np.array([[0.0, 5.0]]),
        h_terms=(h0, h1),
    )
    return dataclasses.replace(sys_bare, reference=reference)


def complex_pair_test(modulus: float, theta: float, epsilon: float, *,
                      coupling: float = 1.0, drift: float = 0.0) -> FastSlowSystem:
    """Linear system whose fast Jacobian is a prescribed complex pair.

    The fast block is the rotation-scaling matrix with eigenvalues
    ``modulus * exp(+-i*theta)``; a 2-d real block realizes any Hurwitz
    pair, which is all the spectral stability statements need.  The
    fast variables couple to one slow variable through
    ``eps*y' = B(y - coupling*[1,1]*x)`` with slow drift ``x' = drift*x``.
    """
    modulus = check_scalar(modulus, "modulus", positive=True)
    theta = check_scalar(theta, "theta")
    epsilon = check_epsilon(epsilon)
    coupling = check_scalar(coupling, "coupling")
    drift = check_scalar(drift, "drift")
    if not (math.pi / 2.0 < theta < 3.0 * math.pi / 2.0):
        raise ValueError(
            f"theta must lie in (pi/2, 3*pi/2) for an attracting fast block, "
            f"got {theta}")

    bmat = modulus * np.array([[math.cos(theta), -math.sin(theta)],
                               [math.sin(theta), math.cos(theta)]])
    vvec = coupling * np.ones(2)

    def f_eval(x, y, eps):
        return np.array([drift * x[0]])

    def g_eval(x, y, eps):
        return bmat @ (y - vvec * x[0])

    jac = SystemJacobians(
        dxg=lambda x, y, eps: (-(bmat @ vvec)).reshape(2, 1),
        dyg=lambda x, y, eps: bmat,
        deg=lambda x, y, eps: np.zeros(2),
        df=lambda x, y, eps: np.array([[drift, 0.0, 0.0]]),
    )

    amat = np.zeros((3, 3))
    amat[0, 0] = drift
    amat[1:, 0] = -(bmat @ vvec) / epsilon
    amat[1:, 1:] = bmat / epsilon

    kmat = np.linalg.solve(bmat - epsilon * drift * np.eye(2), bmat @ vvec)

    def h_exact(x):
        return kmat * x[0]

    def h_iterate(m, x):
        rows = np.linalg.matrix_power(amat, m + 1)[1:]
        return np.linalg.solve(rows[:, 1:], -rows[:, 0] * np.atleast_1d(x)[0])

    domain = np.array([[-10.0, 10.0]])
    reference = ReferenceManifold(
        kind="exact-closed-form", domain=domain, h_exact=h_exact,
        h_terms=(lambda x: vvec * x[0],))
    oracle = ReferenceManifold(
        kind="matrix-power-oracle", domain=domain, h_iterate=h_iterate)
    return FastSlowSystem(
        n_slow=1, n_fast=2, epsilon=epsilon, f_eval=f_eval, g_eval=g_eval,
        jacobians=jac, linear_matrix=amat, reference=reference, oracle=oracle,
        label="pair")


# -- registry used by the CLI and the sweep harness ---------------------------

SYSTEM_PARAMETERS: Mapping[str, Mapping[str, float | None]] = {
    # None marks a required parameter; numbers are defaults
    "linear": {"a": None, "c": None, "eps": None},
    "mm": {"kappa": None, "lam": None, "eps": None},
    "pair": {"modulus": None, "theta": None, "eps": None,
             "coupling": 1.0, "drift": 0.0},
}


def make_system(system_id: str, params: Mapping[str, float]) -> FastSlowSystem:
    """Build a registered system from a flat name -> value parameter map."""
    check_options(system_id, "system", tuple(SYSTEM_PARAMETERS))
    schema = SYSTEM_PARAMETERS[system_id]
    unknown = sorted(set(params) - set(schema))
    if unknown:
        raise ValueError(
            f"unknown parameter(s) {unknown} for system {system_id!r}; "
            f"expected {sorted(schema)}")
    missing = sorted(k for k, v in schema.items() if v is None and k not in params)
    if missing:
        raise ValueError(f"missing parameter(s) {missing} for system {system_id!r}")
    values = {k: params.get(k, schema[k]) for k in schema}
    eps = values.pop("eps")
    if system_id == "linear":
        return linear_test(values["a"], values["c"], eps)
    if system_id == "mm":
        return michaelis_menten(values["kappa"], values["lam"], eps)
    return complex_pair_test(values["modulus"], values["theta"], eps,
                             coupling=values["coupling"], drift=values["drift"])
