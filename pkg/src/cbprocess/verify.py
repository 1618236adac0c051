"""Monte Carlo and quadrature cross-checks between the simulator and the cumulant flow."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cumulant import laplace_transform, semigroup_defect, solve_cumulant, survival_mass
from .errors import DomainError, QuadratureError
from .levy import SERIES_CUTOFF, AxisStable, FiniteAtoms, ZeroMeasure
from .mechanism import BranchingMechanism, _eval, left_half_point
from .simulator import SimConfig, _x0, simulate_ensemble

DEFAULT_K = 3.0


@dataclass(frozen=True)
class VerificationReport:
    """Estimate against reference; ``passed`` iff ``|estimate - reference| <= k * std_error``.

    Deterministic checks (semigroup, generator) carry their tolerance in
    ``std_error`` with ``k = 1``.
    """

    statistic: str
    estimate: complex
    reference: complex
    std_error: float
    n_paths: int
    k: float = DEFAULT_K
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(abs(self.estimate - self.reference) <= self.k * self.std_error)

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "estimate": [self.estimate.real, self.estimate.imag],
            "reference": [self.reference.real, self.reference.imag],
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "k": self.k,
            "pass": self.passed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def mean_and_se(values: np.ndarray) -> tuple[complex, float]:
    """Path-order compensated mean and its standard error.

    Values are shifted by the first one, so a constant sample returns that
    constant exactly with zero error.
    """
    values = np.asarray(values, dtype=complex)
    n = values.size
    v0 = values[0]
    d = values - v0
    shift = complex(math.fsum(d.real), math.fsum(d.imag)) / n
    mean = v0 + shift
    if n < 2:
        return mean, 0.0
    var = math.fsum(np.abs(d - shift) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _digest(mech, config, **extra) -> str:
    blob = json.dumps({"mech": mech.to_dict(), "config": config.to_dict(), **extra},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cvec(v):
    return [[float(c.real), float(c.imag)] for c in np.atleast_1d(np.asarray(v, dtype=complex))]


def _interior_or_zero(lam, m):
    lam = left_half_point(lam, m)
    if np.all(lam == 0):
        return lam, True
    if np.any(lam.real >= 0):
        raise DomainError("lambda must have negative real parts (or be exactly 0); "
                          "boundary points are not supported")
    return lam, False


def _exp_stat(states, alive, theta):
    # cemetery contributes 0; states there are inf
    out = np.zeros(states.shape[0], dtype=complex)
    out[alive] = np.exp(states[alive] @ theta)
    return out


def monte_carlo_laplace(mech: BranchingMechanism, x0, t: float, lam, N: int,
                        config: SimConfig, k: float = DEFAULT_K) -> VerificationReport:
    """Empirical ``E exp(<lam, xi(t)>)`` against ``exp(<x0, K(t, lam)>)``.

    With ``lam = 0`` the statistic is the survival indicator and the
    reference is the total mass from the minimal solution.
    """
    x0 = _x0(x0, mech.m)
    lam, at_zero = _interior_or_zero(lam, mech.m)
    meta = {"t": t, "lambda": _cvec(lam), "x0": list(x0), "config": _digest(mech, config)}
    if t == 0:
        values = np.full(N, np.exp(np.dot(lam, x0)))
        reference = complex(np.exp(np.dot(lam, x0)))
    else:
        cfg = dataclasses.replace(config, record_grid=(t,))
        ens = simulate_ensemble(mech, x0, t, cfg, N)
        alive = ens.alive[:, -1]
        if at_zero:
            values = alive.astype(complex)
            sm = survival_mass(mech, x0, t)
            reference = complex(sm.value)
            meta["minimal_converged"] = sm.converged
        else:
            values = _exp_stat(ens.states[:, -1], alive, lam)
            reference = laplace_transform(mech, x0, t, lam)
    est, se = mean_and_se(values)
    stat = "survival" if at_zero else "laplace"
    return VerificationReport(stat, est, reference, se, N, k, meta)


def martingale_residual(mech: BranchingMechanism, x0, lam, u: float, checkpoints, N: int,
                        config: SimConfig, k: float = DEFAULT_K) -> list[VerificationReport]:
    """``E exp(<K(u-t, lam), xi(t)>)`` at each checkpoint against ``exp(<K(u, lam), x0>)``."""
    x0 = _x0(x0, mech.m)
    lam, at_zero = _interior_or_zero(lam, mech.m)
    if at_zero:
        raise DomainError("martingale residual needs Re lambda < 0")
    cps = sorted(float(c) for c in checkpoints)
    if cps[0] < 0 or cps[-1] > u:
        raise DomainError("checkpoints must lie in [0, u]")
    lags = sorted({u - c for c in cps} | {0.0, u})
    flow = solve_cumulant(mech, lam, u, grid=lags)
    K = {lag: flow.values[i] for i, lag in enumerate(flow.times)}
    reference = complex(np.exp(np.dot(K[u], x0)))
    ens = None
    if cps[-1] > 0:
        cfg = dataclasses.replace(config, record_grid=tuple(cps))
        ens = simulate_ensemble(mech, x0, cps[-1], cfg, N)
    reports = []
    for j, c in enumerate(cps):
        theta = K[u - c]
        if c == 0:
            values = np.full(N, np.exp(np.dot(theta, x0)))
        else:
            values = _exp_stat(ens.states[:, j], ens.alive[:, j], theta)
        est, se = mean_and_se(values)
        meta = {"t": c, "u": u, "lambda": _cvec(lam), "x0": list(x0),
                "config": _digest(mech, config)}
        reports.append(VerificationReport("martingale", est, reference, se, N, k, meta))
    return reports


class TestFunction:
    """Exponential test functions ``f(t, x) = exp(<theta(t), x>)``.

    ``exponential``: ``theta`` is a constant ``lam``.
    ``time-exponential``: ``theta(t) = K(u - t, lam)`` tabulated on a grid of
    step ``dt``, for which ``f_t + A f = 0``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, mech: BranchingMechanism, kind: str, lam, u=None, dt=None):
        self.mech = mech
        self.kind = kind
        self.lam = left_half_point(lam, mech.m)
        self.u = u
        if kind == "exponential":
            self._h = _eval(mech, self.lam)
        elif kind == "time-exponential":
            n = int(round(u / dt))
            self._n, self._du = n, u / n
            flow = solve_cumulant(mech, self.lam, u, grid=n)
            self._theta = flow.values
            self._htheta = np.array([_eval(mech, v) for v in flow.values])
        else:
            raise ValueError(f"unknown test function kind {kind!r}")

    @classmethod
    def exponential(cls, mech, lam):
        return cls(mech, "exponential", lam)

    @classmethod
    def time_exponential(cls, mech, lam, u, dt):
        return cls(mech, "time-exponential", lam, u=u, dt=dt)

    def _index(self, t):
        j = self._n - int(round(t / self._du))
        if not 0 <= j <= self._n:
            raise DomainError(f"t={t} outside [0, u]")
        return j

    def theta(self, t=0.0) -> np.ndarray:
        if self.kind == "exponential":
            return self.lam
        return self._theta[self._index(t)]

    def h_theta(self, t=0.0) -> np.ndarray:
        if self.kind == "exponential":
            return self._h
        return self._htheta[self._index(t)]

    def value(self, t, X):
        return np.exp(np.asarray(X) @ self.theta(t))

    def grad(self, t, X):
        return self.theta(t) * self.value(t, X)[..., None]

    def second_diag(self, t, X):
        return self.theta(t) ** 2 * self.value(t, X)[..., None]

    def time_derivative(self, t, X):
        if self.kind == "exponential":
            return np.zeros(np.shape(X)[:-1], dtype=complex)
        return -(np.asarray(X) @ self.h_theta(t)) * self.value(t, X)

    def delta(self, t, X, z):
        """``f(t, x + z) - f(t, x)``, computed as ``f(t, x) expm1(<theta, z>)``."""
        return self.value(t, X) * np.expm1(np.asarray(z) @ self.theta(t))

    def generator_closed(self, t, X):
        """``A f`` via the identity ``A e^<theta,x> = e^<theta,x> <x, H(theta)>``."""
        return self.value(t, X) * (np.asarray(X) @ self.h_theta(t))


def generator_apply(mech: BranchingMechanism, f: TestFunction, x, t: float = 0.0,
                    rel_tol: float = 1e-5) -> complex:
    """Evaluate ``A f(t, .)`` at ``x`` term by term, with the Lévy part by quadrature.

    The result is checked against the closed form ``e^<theta,x> <x, H(theta)>``;
    a relative disagreement above ``rel_tol`` raises :class:`QuadratureError`.
    """
    value = _generator_terms(mech, f, x, t)
    closed = complex(f.generator_closed(t, np.asarray(x, dtype=float)))
    gap = abs(value - closed)
    if gap > rel_tol * abs(closed) + 1e-14:
        raise QuadratureError(f"generator quadrature {value} disagrees with closed form "
                              f"{closed}", gap)
    return value


def _generator_terms(mech, f, x, t):
    mech.check()
    x = _x0(x, mech.m)
    fx = complex(f.value(t, x))
    grad = f.grad(t, x)
    second = f.second_diag(t, x)
    B = mech.drift_matrix
    total = 0.0j
    for k, row in enumerate(mech.rows):
        if x[k] == 0:
            continue
        jump = 0.0j
        levy = row.levy
        if isinstance(levy, FiniteAtoms):
            for z, w in zip(levy.points, levy.masses):
                small = z.sum() <= 1.0
                jump += w * (complex(f.delta(t, x, z)) - (z[k] * grad[k] if small else 0.0))
        elif isinstance(levy, AxisStable):
            jump = _stable_generator_term(levy, f, x, t, k, fx, grad, second)
        elif not isinstance(levy, ZeroMeasure):
            raise TypeError(type(levy))
        total += x[k] * (np.dot(B[k], grad) + 0.5 * row.beta * second[k] + jump)
    return complex(total)


def _stable_generator_term(levy, f, x, t, k, fx, grad, second):
    a, c, delta = levy.axis, levy.scale, SERIES_CUTOFF
    idx, own = levy.index, levy.axis == k
    e = np.zeros(x.size)
    e[a] = 1.0
    # integrand scaled by f(x); the unscaled Fourier tail would lose the QAWF structure
    def g(r):
        out = complex(f.delta(t, x, r * e)) / fx
        if own and r <= 1.0:
            out -= r * grad[k] / fx
        return out

    theta_a = complex(f.theta(t)[a])
    oscillation = theta_a.imag if theta_a.real == 0.0 and theta_a.imag != 0.0 else 0.0
    val, _ = levy.quad_integrate(g, delta, oscillation)
    # Taylor terms of f(x + r e_a) below the series cutoff
    m2 = c * delta ** (2 - idx) / (2 - idx)
    m3 = c * delta ** (3 - idx) / (3 - idx)
    near = 0.5 * second[a] * m2 + theta_a ** 3 * fx * m3 / 6
    if not own:
        near += grad[a] * c * delta ** (1 - idx) / (1 - idx)
    return val * fx + near


def dynkin_residual(mech: BranchingMechanism, x0, f: TestFunction, u: float, checkpoints,
                    N: int, config: SimConfig, k: float = DEFAULT_K
                    ) -> list[VerificationReport]:
    """Mean of ``f(t, xi(t)) - f(0, xi(0)) - int_0^t (f_t + A f)(s, xi(s)) ds`` per checkpoint."""
    x0 = _x0(x0, mech.m)
    cps = sorted(float(c) for c in checkpoints)
    if cps[0] < 0 or cps[-1] > u:
        raise DomainError("checkpoints must lie in [0, u]")
    f0 = complex(f.value(0.0, x0))

    def integrand(s, X):
        return f.time_derivative(s, X) + f.generator_closed(s, X)

    ens = None
    if cps[-1] > 0:
        cfg = dataclasses.replace(config, record_grid=tuple(cps))
        ens = simulate_ensemble(mech, x0, cps[-1], cfg, N, integrand=integrand)
    reports = []
    for j, c in enumerate(cps):
        if c == 0:
            values = np.zeros(N, dtype=complex)
        else:
            alive = ens.alive[:, j]
            fx = np.zeros(N, dtype=complex)
            fx[alive] = f.value(c, ens.states[alive, j])
            values = fx - f0 - ens.integrals[:, j]
        est, se = mean_and_se(values)
        meta = {"t": c, "u": u, "kind": f.kind, "lambda": _cvec(f.lam), "x0": list(x0),
                "config": _digest(mech, config)}
        reports.append(VerificationReport("dynkin", est, 0.0j, se, N, k, meta))
    return reports


def branching_property_check(mech: BranchingMechanism, x, y, t: float, lam, N: int,
                             config: SimConfig, k: float = DEFAULT_K) -> VerificationReport:
    """``E exp(<lam, xi^x(t) + xi^y(t)>)`` over independent pairs against the ``x + y`` transform.

    The ``x`` paths use stream indices ``0..N-1`` and the ``y`` paths ``N..2N-1``.
    """
    x, y = _x0(x, mech.m), _x0(y, mech.m)
    lam, at_zero = _interior_or_zero(lam, mech.m)
    if at_zero:
        raise DomainError("branching check needs Re lambda < 0")
    cfg = dataclasses.replace(config, record_grid=(t,))
    ex = simulate_ensemble(mech, x, t, cfg, N)
    ey = simulate_ensemble(mech, y, t, cfg, N, first_index=N)
    alive = ex.alive[:, -1] & ey.alive[:, -1]
    values = np.zeros(N, dtype=complex)
    values[alive] = np.exp((ex.states[alive, -1] + ey.states[alive, -1]) @ lam)
    est, se = mean_and_se(values)
    reference = laplace_transform(mech, x + y, t, lam)
    meta = {"t": t, "lambda": _cvec(lam), "x": list(x), "y": list(y),
            "config": _digest(mech, config)}
    return VerificationReport("branching", est, reference, se, N, k, meta)


def semigroup_report(mech: BranchingMechanism, lam, s: float, t: float,
                     tol: float = 1e-6) -> VerificationReport:
    lam = left_half_point(lam, mech.m)
    defect = semigroup_defect(mech, lam, s, t)
    meta = {"s": s, "t": t, "lambda": _cvec(lam)}
    return VerificationReport("semigroup", complex(defect), 0.0j, tol, 0, 1.0, meta)


def generator_report(mech: BranchingMechanism, lam, x, rel_tol: float | None = None
                     ) -> VerificationReport:
    if rel_tol is None:
        rel_tol = 1e-6 if mech.is_finite_activity else 1e-5
    f = TestFunction.exponential(mech, lam)
    value = _generator_terms(mech, f, x, 0.0)
    closed = complex(f.generator_closed(0.0, np.asarray(_x0(x, mech.m))))
    meta = {"lambda": _cvec(f.lam), "x": list(_x0(x, mech.m))}
    return VerificationReport("generator", value, closed, rel_tol * abs(closed) + 1e-14, 0,
                              1.0, meta)
