"""Experiment engine: order fits, threshold bisection, region comparison.

Three measurements turn the package's claims into numbers:

* :func:`order_of_accuracy` runs the projection across a ladder of
  ``eps`` values and fits the log-log slope of the error against a
  reference manifold; the slope should match ``m + 1``.
* :func:`empirical_threshold` bisects the step size between an observed
  converging run and an observed diverging run, locating the stability
  boundary without using any closed-form multiplier.
* :func:`compare_regions` rasterizes converge/diverge behavior of real
  iterations on synthetic one-eigenvalue-pair systems and scores it
  against the closed-form multiplier modulus, cell by cell.

Grid rows can run in parallel threads; set ``SLOWMAN_THREADS`` to cap
the worker count (default is serial execution). Output ordering is
deterministic either way.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, check_options, check_scalar
from .derivatives import DerivativeMode, _check_m
from .exceptions import BracketError, DivergenceError, FitError
from .projector import IterationConfig, project
from .stability import mu_hat
from .systems import (FastSlowSystem, complex_pair_test, default_flow_map,
                      make_system)

__all__ = [
    "SweepSpec",
    "OrderFit",
    "RegionComparison",
    "order_of_accuracy",
    "empirical_threshold",
    "compare_regions",
]

#: errors below this are treated as a rounding floor, not data to fit
_ERROR_FLOOR = 1e-13


def _worker_count() -> int:
    raw = os.environ.get("SLOWMAN_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, min(n, 64))


def _run_rows(fn, n_rows):
    workers = _worker_count()
    if workers == 1:
        return [fn(i) for i in range(n_rows)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_rows)))


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep: a registered system, its parameters, and the grid.

    ``epsilons`` must be strictly decreasing; step sizes are given as
    dimensionless ratios against each ``eps`` so one spec spans the
    whole ladder.
    """

    system: str
    params: dict
    epsilons: tuple
    m_values: tuple = (0,)
    x0: tuple = (1.0,)
    variant: str = "analytic-recursive"
    h_over_eps: float = 1.0
    h_hat_over_eps: float | None = None
    eta: float = 1.0
    max_iters: int = 10000

    def __post_init__(self):
        check_options(self.variant, "variant",
                      ("analytic-recursive", "forward-difference"))
        eps = tuple(check_scalar(e, "epsilon", positive=True)
                    for e in self.epsilons)
        if len(eps) == 0:
            raise ValueError("epsilons must be non-empty")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError(f"epsilons must be strictly decreasing, got {eps}")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "m_values",
                           tuple(_check_m(m) for m in self.m_values))
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        object.__setattr__(self, "h_over_eps",
                           check_scalar(self.h_over_eps, "h_over_eps", positive=True))
        if self.h_hat_over_eps is not None:
            object.__setattr__(
                self, "h_hat_over_eps",
                check_scalar(self.h_hat_over_eps, "h_hat_over_eps", positive=True))
        elif self.variant == "forward-difference":
            raise ValueError("forward-difference sweeps need h_hat_over_eps")
        object.__setattr__(self, "eta", check_scalar(self.eta, "eta", positive=True))
        object.__setattr__(self, "max_iters",
                           check_scalar(self.max_iters, "max_iters",
                                        positive=True, integer=True))

    def mode_for(self, epsilon: float) -> DerivativeMode:
        if self.variant == "analytic-recursive":
            return DerivativeMode.analytic(self.h_over_eps * epsilon)
        return DerivativeMode.differenced(self.h_hat_over_eps * epsilon,
                                          eta=self.eta)

    def system_for(self, epsilon: float) -> FastSlowSystem:
        return make_system(self.system, {**self.params, "eps": epsilon})


@dataclass(frozen=True)
class OrderFit:
    """Least-squares fit of log(error) against log(eps).

    ``errors_per_epsilon`` holds (eps, error) pairs that entered the
    fit; ``excluded`` lists eps values dropped for non-convergence.
    When every error sits at the rounding floor the fit is meaningless
    and is skipped with ``at_floor`` set (slope and r_squared are NaN).
    """

    slope: float
    intercept: float
    r_squared: float
    errors_per_epsilon: tuple
    excluded: tuple = ()
    at_floor: bool = False


def order_of_accuracy(spec: SweepSpec, m) -> OrderFit:
    """Measure the convergence order of the projection across epsilons.

    Each eps runs one projection to tolerance ``eps^(m+2)`` (one order
    below the effect being measured), seeded on the critical manifold,
    and records the distance of the output from the system's reference
    manifold value at ``spec.x0``.

    Raises
    ------
    FitError
        When fewer than 3 epsilons produce a converged measurement.
    """
    m = _check_m(m)
    pairs = []
    excluded = []
    for eps in spec.epsilons:
        sys = spec.system_for(eps)
        if sys.reference is None:
            raise ValueError(
                f"system {spec.system!r} has no reference manifold to measure against")
        mode = spec.mode_for(eps)
        fm = (default_flow_map(sys, mode.H_hat)
              if spec.variant == "forward-difference" else None)
        cfg = IterationConfig(m=m, mode=mode, tol=eps ** (m + 2),
                              max_iters=spec.max_iters,
                              seed_policy="critical-manifold")
        try:
            trace = project(sys, fm, cfg, np.asarray(spec.x0))
        except DivergenceError:
            excluded.append(eps)
            continue
        if not trace.converged:
            excluded.append(eps)
            continue
        target = sys.reference.evaluate(np.asarray(spec.x0), epsilon=eps)
        pairs.append((eps, float(np.linalg.norm(trace.output - target))))

    if pairs and max(err for _, err in pairs) <= _ERROR_FLOOR:
        return OrderFit(slope=math.nan, intercept=math.nan, r_squared=math.nan,
                        errors_per_epsilon=tuple(pairs),
                        excluded=tuple(excluded), at_floor=True)
    if len(pairs) < 3:
        raise FitError(
            f"only {len(pairs)} converged measurements "
            f"({len(excluded)} excluded); need at least 3 for a slope fit")
    log_eps = np.log([e for e, _ in pairs])
    log_err = np.log([err for _, err in pairs])
    slope, intercept = np.polyfit(log_eps, log_err, 1)
    fitted = slope * log_eps + intercept
    ss_res = float(np.sum((log_err - fitted) ** 2))
    ss_tot = float(np.sum((log_err - np.mean(log_err)) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return OrderFit(slope=float(slope), intercept=float(intercept),
                    r_squared=r_squared, errors_per_epsilon=tuple(pairs),
                    excluded=tuple(excluded))


def _probe(sys, cfg, x0, y_seed) -> bool:
    """True when a bounded run shows net convergence, False otherwise."""
    fm = (default_flow_map(sys, cfg.mode.H_hat)
          if cfg.mode.variant == "forward-difference" else None)
    try:
        trace = project(sys, fm, cfg, x0, y_seed)
    except DivergenceError:
        return False
    if trace.converged:
        return True
    if trace.diverged:
        return False
    return trace.residuals[-1] < trace.residuals[0]


def _mode_with_step(template: DerivativeMode, step: float) -> DerivativeMode:
    if template.variant == "analytic-recursive":
        return DerivativeMode.analytic(step)
    return DerivativeMode.differenced(step, eta=template.eta)


def empirical_threshold(sys: FastSlowSystem, cfg: IterationConfig, x0, y_seed,
                        step_range, probe_iters: int = 400) -> float:
    """Bisect the step size at the observed convergence/divergence flip.

    ``step_range`` brackets the absolute step: ``H`` for the
    analytic-recursive variant, ``H_hat`` (at the template's eta) for
    the forward-difference one.  The lower end must converge and the
    upper end diverge; the bracket is narrowed to relative width 1e-3
    and the midpoint returned.

    Raises
    ------
    BracketError
        When both ends behave the same way; the message says which way.
    """
    lo = check_scalar(step_range[0], "step_range[0]", positive=True)
    hi = check_scalar(step_range[1], "step_range[1]", positive=True)
    if lo >= hi:
        raise ValueError(f"step range must be increasing, got ({lo}, {hi})")
    probe_iters = check_scalar(probe_iters, "probe_iters", positive=True,
                               integer=True)
    x0 = as_vector(x0, "x0", size=sys.n_slow)
    y_seed = as_vector(y_seed, "y_seed", size=sys.n_fast)

    def converges(step):
        probe_cfg = IterationConfig(
            m=cfg.m, mode=_mode_with_step(cfg.mode, step),
            tol=cfg.tol, max_iters=probe_iters, seed_policy=cfg.seed_policy)
        return _probe(sys, probe_cfg, x0, y_seed)

    lo_conv = converges(lo)
    hi_conv = converges(hi)
    if lo_conv == hi_conv:
        word = "converges" if lo_conv else "diverges"
        raise BracketError(
            f"no stability transition in ({lo}, {hi}): the iteration "
            f"{word} at both ends")
    if not lo_conv:
        raise BracketError(
            f"bracket is inverted: divergence at the lower end {lo}")
    while (hi - lo) > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if converges(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegionComparison:
    """Cell-by-cell agreement between predicted and observed stability.

    ``predicted`` is the closed-form verdict ``|mu_hat| < 1``;
    ``observed`` the behavior of a real bounded iteration; ``excluded``
    marks cells inside the boundary band where the leading-order
    formula is not expected to decide.  ``mismatch`` is the disagreeing
    fraction of the non-excluded cells.
    """

    m: int
    eta: float
    epsilon: float
    thetas: np.ndarray
    steps: np.ndarray
    abs_mu: np.ndarray
    predicted: np.ndarray
    observed: np.ndarray
    excluded: np.ndarray
    mismatch: float

    def __float__(self):
        return self.mismatch

    def iter_rows(self):
        """Yield (theta, step, abs_mu, predicted, observed, excluded) row-major."""
        for i, theta in enumerate(self.thetas):
            for j, step in enumerate(self.steps):
                yield (theta, step, float(self.abs_mu[i, j]),
                       bool(self.predicted[i, j]), bool(self.observed[i, j]),
                       bool(self.excluded[i, j]))


def compare_regions(spec: SweepSpec, m, eta: float = 1.0,
                    resolution: int = 64,
                    theta_range=(0.51 * math.pi, 1.49 * math.pi),
                    step_range=(0.02, 3.0),
                    boundary_band: float = 0.02,
                    probe_iters: int = 80) -> RegionComparison:
    """Score the closed-form stability region against real iterations.

    The grid is (angle, per-node decay exponent).  Each cell builds a
    synthetic system whose fast Jacobian is the unit-modulus complex
    pair at that angle, runs a bounded forward-difference projection
    with the stencil spacing that realizes the cell's decay exponent,
    and classifies the run as converging or diverging. ``epsilon`` is
    taken from the head of ``spec.epsilons``.
    """
    m = _check_m(m)
    eta = check_scalar(eta, "eta", positive=True)
    resolution = check_scalar(resolution, "resolution", positive=True, integer=True)
    epsilon = spec.epsilons[0]
    thetas = np.linspace(theta_range[0], theta_range[1], resolution)
    steps = np.linspace(step_range[0], step_range[1], resolution)

    abs_mu = np.empty((resolution, resolution))
    predicted = np.empty((resolution, resolution), dtype=bool)
    observed = np.empty((resolution, resolution), dtype=bool)

    def run_row(i):
        theta = thetas[i]
        sys = complex_pair_test(1.0, theta, epsilon)
        target = sys.reference.evaluate(np.asarray(spec.x0))
        seed = target + np.array([0.5, -0.5])
        decay = abs(math.cos(theta))
        row_mu = np.empty(resolution)
        row_obs = np.empty(resolution, dtype=bool)
        for j, step in enumerate(steps):
            row_mu[j] = abs(mu_hat(m, step, theta, eta))
            h_hat = step * epsilon / decay
            cfg = IterationConfig(
                m=m, mode=DerivativeMode.differenced(h_hat, eta=eta),
                tol=1e-9, max_iters=probe_iters)
            row_obs[j] = _probe(sys, cfg, np.asarray(spec.x0), seed)
        return row_mu, row_obs

    for i, (row_mu, row_obs) in enumerate(_run_rows(run_row, resolution)):
        abs_mu[i] = row_mu
        observed[i] = row_obs
    predicted[:] = abs_mu < 1.0
    excluded = np.abs(abs_mu - 1.0) < boundary_band
    live = ~excluded
    n_live = int(live.sum())
    mismatch = (float((predicted[live] != observed[live]).sum()) / n_live
                if n_live else 0.0)
    return RegionComparison(
        m=m, eta=eta, epsilon=epsilon, thetas=thetas, steps=steps,
        abs_mu=abs_mu, predicted=predicted, observed=observed,
        excluded=excluded, mismatch=mismatch)
