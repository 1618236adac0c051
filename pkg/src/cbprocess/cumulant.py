"""Cumulant semigroup: the backward equation dK/dt = H(K), K(0) = lambda."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as sp_integrate

from .errors import CBError, DomainError, DomainEscapeError
from .mechanism import BranchingMechanism, _eval, left_half_point, stable_mechanism
from .ode import SolverStats, integrate

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
# eps = 2**-k; the sequence is geometric in k so that slowly converging
# mechanisms (index close to 1) still reach the limit
DEFAULT_KS = (4, 8, 16, 32, 64, 128, 256, 512)


@dataclass(frozen=True)
class CumulantFlow:
    lambda0: np.ndarray
    times: np.ndarray
    values: np.ndarray  # shape (len(times), m), complex
    solver_stats: SolverStats

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not on the flow grid")
        return self.values[i]


def _grid(T, grid):
    if grid is None:
        return np.array([0.0, T])
    if np.isscalar(grid):
        n = int(grid)
        if n < 1:
            raise CBError("grid must have at least one interval")
        return np.array([T * i / n for i in range(n + 1)])
    times = np.asarray(grid, dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    if np.any(np.diff(times) <= 0):
        raise CBError("output grid must be strictly increasing")
    return times


def solve_cumulant(mech: BranchingMechanism, lam, T: float, rel_tol: float = DEFAULT_RTOL,
                   abs_tol: float = DEFAULT_ATOL, grid=None) -> CumulantFlow:
    """Integrate the backward equation on ``[0, T]``.

    ``grid`` is ``None`` (endpoints only), a number of equal intervals, or an
    explicit increasing sequence of times starting at 0.
    """
    mech.check()
    lam = left_half_point(lam, mech.m)
    if not T > 0:
        raise CBError(f"horizon T must be positive, got {T}")
    times = _grid(T, grid)

    def project(t, y):
        re = y.real
        if np.any(re > abs_tol):
            raise DomainEscapeError(
                f"flow left the left half-plane at t={t:.6g} (Re K = {re.max():.3e}); "
                "tighten tolerances or check the mechanism", t)
        if np.any(re > 0):
            y = np.where(re > 0, 1j * y.imag, y)
        return y

    values, stats = integrate(lambda y: _eval(mech, y), lam, times, rel_tol, abs_tol, project)
    values[0] = lam
    return CumulantFlow(lam, times, values, stats)


def integral_form_residual(mech: BranchingMechanism, flow: CumulantFlow, refine: int = 16,
                           **opts) -> float:
    """``max_t |K(t) - lambda - int_0^t H(K(s)) ds|`` over the flow grid.

    The integral uses Simpson's rule on a grid ``refine`` times finer than the
    flow's, with ``K`` re-solved at the interior nodes, so the quadrature
    error stays well below the solver tolerance.
    """
    fine = np.concatenate([np.linspace(a, b, refine, endpoint=False)
                           for a, b in zip(flow.times[:-1], flow.times[1:])] + [flow.times[-1:]])
    dense = solve_cumulant(mech, flow.lambda0, float(flow.times[-1]), grid=fine[1:], **opts)
    h = np.array([_eval(mech, v) for v in dense.values])
    integral = np.zeros_like(h)
    for j in range(flow.m):
        for part, unit in ((h[:, j].real, 1.0), (h[:, j].imag, 1j)):
            integral[1:, j] += unit * sp_integrate.cumulative_simpson(part, x=fine)
    return float(np.max(np.abs(flow.values - flow.lambda0 - integral[::refine])))


def semigroup_defect(mech: BranchingMechanism, lam, s: float, t: float, **opts) -> float:
    """``max_i |K_i(s+t, lam) - K_i(s, K(t, lam))|``."""
    lam = left_half_point(lam, mech.m)
    if not (s > 0 and t > 0):
        raise CBError("s and t must be positive")
    whole = solve_cumulant(mech, lam, s + t, grid=[0.0, t, s + t], **opts)
    inner = whole.values[1]
    outer = solve_cumulant(mech, inner, s, **opts).values[-1]
    return float(np.max(np.abs(whole.values[-1] - outer)))


@dataclass(frozen=True)
class MinimalSolution:
    """Limit of ``K(t, -eps 1)`` as ``eps -> 0``.

    ``flow`` is the last solved flow, ``previous`` the one before it and
    ``gap`` their sup-norm distance; ``converged`` is False when the stall
    tolerance was never met.
    """

    flow: CumulantFlow
    previous: CumulantFlow | None
    gap: float
    k: int
    converged: bool

    @property
    def times(self):
        return self.flow.times

    @property
    def values(self):
        return self.flow.values


def minimal_solution_at_zero(mech: BranchingMechanism, T: float, grid=64, ks=DEFAULT_KS,
                             stall_tol: float = 1e-9, rel_tol: float = DEFAULT_RTOL
                             ) -> MinimalSolution:
    mech.check()
    prev = None
    gap = math.inf
    flow = None
    for k in ks:
        eps = 2.0 ** -k
        flow = solve_cumulant(mech, -eps * np.ones(mech.m), T, rel_tol=rel_tol,
                              abs_tol=1e-3 * rel_tol * eps, grid=grid)
        if prev is not None:
            diff = flow.values.real - prev.values.real
            slack = 10 * rel_tol * np.abs(prev.values) + 1e-300
            if np.any(diff < -slack):
                raise CBError(f"flows are not monotone in eps at k={k}")
            gap = float(np.max(np.abs(flow.values - prev.values)))
            if gap < stall_tol:
                return MinimalSolution(flow, prev, gap, k, True)
        prev = flow
    return MinimalSolution(flow, prev, gap, ks[-1], False)


@dataclass(frozen=True)
class ConservativenessVerdict:
    verdict: str  # "conservative-evidence" | "non-conservative" | "inconclusive"
    minimal_sup: float
    minimal_converged: bool
    grey_exponent: float | None = None
    grey_partial_integrals: tuple | None = None

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "minimal_sup": self.minimal_sup,
            "minimal_converged": self.minimal_converged,
            "grey_exponent": self.grey_exponent,
            "grey_partial_integrals": (None if self.grey_partial_integrals is None
                                       else list(self.grey_partial_integrals)),
        }


GREY_DELTAS = tuple(10.0 ** -j for j in range(1, 11))


def grey_diagnostics(mech: BranchingMechanism):
    """Local exponent of ``0 v -H(-lam)`` near 0 and partial Grey integrals.

    Returns ``(exponent, partials)`` where ``partials[j]`` approximates
    ``int_{delta_j}^{1} dlam / (0 v -H(-lam))``.  An integrand that vanishes
    near 0 gives exponent ``inf`` (the integral diverges by convention).
    """
    if mech.m != 1:
        raise CBError("the Grey test is one-dimensional")

    def g(x):
        return max(0.0, -_eval(mech, np.array([-x + 0j]))[0].real)

    probes = np.array(GREY_DELTAS)
    vals = np.array([g(x) for x in probes])
    tail = vals[-5:]
    if np.any(tail <= 0.0):
        exponent = math.inf
    else:
        exponent = float(np.polyfit(np.log(probes[-5:]), np.log(tail), 1)[0])

    partials = []
    total = 0.0
    edges = (1.0,) + GREY_DELTAS
    for hi, lo in zip(edges[:-1], edges[1:]):
        if math.isfinite(total):
            # integrate in log-space: dlam / g = lam / g d(log lam)
            def f(u):
                x = math.exp(u)
                gx = g(x)
                return x / gx if gx > 0 else math.inf
            samples = [f(u) for u in np.linspace(math.log(lo), math.log(hi), 9)]
            if not all(math.isfinite(s) for s in samples):
                total = math.inf
            else:
                total += sp_integrate.quad(f, math.log(lo), math.log(hi), limit=200)[0]
        partials.append(total)
    return exponent, tuple(partials)


def conservativeness_verdict(mech: BranchingMechanism, T: float, tol: float = 1e-7,
                             grid: int = 64) -> ConservativenessVerdict:
    minimal = minimal_solution_at_zero(mech, T, grid=grid)
    sup = float(np.max(np.abs(minimal.values)))
    exponent = partials = None
    if mech.m == 1:
        exponent, partials = grey_diagnostics(mech)
    if sup > tol:
        # eps-flows bound |K(t,0)| from above, so only a converged limit is evidence
        verdict = "non-conservative" if minimal.converged else "inconclusive"
    elif mech.m == 1 and exponent < 1.0 - 1e-6:
        verdict = "inconclusive"
    else:
        verdict = "conservative-evidence"
    return ConservativenessVerdict(verdict, sup, minimal.converged, exponent, partials)


def laplace_transform(mech: BranchingMechanism, x, t: float, lam, **opts) -> complex:
    """``exp(<x, K(t, lam)>)``."""
    x = _orthant_point(x, mech.m)
    lam = left_half_point(lam, mech.m)
    if t == 0:
        return complex(np.exp(np.dot(x, lam)))
    k = solve_cumulant(mech, lam, t, **opts).values[-1]
    return complex(np.exp(np.dot(x, k)))


@dataclass(frozen=True)
class SurvivalMass:
    value: float
    converged: bool
    gap: float

    def __float__(self):
        return self.value


def survival_mass(mech: BranchingMechanism, x, t: float) -> SurvivalMass:
    """``P(t, x, D) = exp(<x, K(t, 0)>)`` with the minimal solution."""
    x = _orthant_point(x, mech.m)
    if t == 0:
        return SurvivalMass(1.0, True, 0.0)
    minimal = minimal_solution_at_zero(mech, t, grid=None)
    value = float(np.exp(np.dot(x, minimal.values[-1].real)))
    return SurvivalMass(value, minimal.converged, minimal.gap)


def nonuniqueness_residual(r: float, T: float, mech: BranchingMechanism | None = None,
                           n_grid: int = 200) -> float:
    """Integral-equation residual of ``K^r(t, 0) = -(t-r)^2 1{t>r}``.

    The family solves the backward equation at ``lam = 0`` for the
    half-stable mechanism ``H(lam) = -2 sqrt(-lam)`` for every ``r`` in
    ``[0, inf]``; ``r = inf`` is the zero branch.
    """
    mech = stable_mechanism(2.0, 0.5) if mech is None else mech
    mech.check()

    def k_r(s):
        return -(s - r) ** 2 if s > r else 0.0

    def h(s):
        return _eval(mech, np.array([complex(k_r(s))]))[0].real

    worst = 0.0
    for t in np.linspace(0.0, T, n_grid + 1):
        if t == 0.0:
            integral = 0.0
        elif math.isfinite(r) and 0.0 < r < t:
            integral = (sp_integrate.quad(h, 0.0, r, epsabs=1e-14, epsrel=1e-13)[0]
                        + sp_integrate.quad(h, r, t, epsabs=1e-14, epsrel=1e-13)[0])
        else:
            integral = sp_integrate.quad(h, 0.0, t, epsabs=1e-14, epsrel=1e-13)[0]
        worst = max(worst, abs(k_r(t) - integral))
    return worst


def _orthant_point(x, m):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size == 1 and m > 1:
        x = np.full(m, x[0])
    if x.size != m:
        raise DomainError(f"x has length {x.size}, expected {m}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DomainError(f"x must lie in the positive orthant, got {x}")
    return x
