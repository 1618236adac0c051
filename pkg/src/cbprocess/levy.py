"""Parametric Lévy measures on the punctured orthant and their integral services.

Three variants are supported:

* :class:`ZeroMeasure` -- no jumps.
* :class:`FiniteAtoms` -- a finite sum of point masses ``mass * delta_z``.
* :class:`AxisStable` -- ``scale * r**(-1 - index) dr`` on the ray ``{r e_axis: r > 0}``.

Norms of jump vectors are L1 norms, ``|z| = z_1 + ... + z_m``.  Axes are
0-based in Python; the JSON format uses 1-based axes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import CBError, OscillatoryWarning, QuadratureError

# below this radius the stable integrand is replaced by its Taylor series
SERIES_CUTOFF = 1e-6
QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-14


@dataclass(frozen=True)
class ZeroMeasure:
    def tail_mass(self, eps):
        return 0.0


@dataclass(frozen=True)
class FiniteAtoms:
    """Finitely many atoms; ``atoms`` is a tuple of ``(z, mass)`` pairs."""

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((tuple(float(v) for v in z), float(w)) for z, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)

    @cached_property
    def points(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms], dtype=float)

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @cached_property
    def norms(self) -> np.ndarray:
        return self.points.sum(axis=1) if self.atoms else np.zeros(0)

    def tail_mass(self, eps):
        return float(self.masses[self.norms > eps].sum())


@dataclass(frozen=True)
class AxisStable:
    axis: int
    index: float
    scale: float

    def tail_mass(self, eps):
        return self.scale * eps ** (-self.index) / self.index

    def quad_integrate(self, g: Callable[[float], complex], lo: float = SERIES_CUTOFF,
                       oscillation: float = 0.0):
        """Integrate ``g(r) * scale * r**(-1-index)`` over ``[lo, inf)``.

        Real and imaginary parts are integrated separately with the interval
        split at ``r = 1``.  When ``oscillation`` is nonzero the tail is a pure
        Fourier integral and ``g`` must be ``exp(i*oscillation*r) - 1``; the
        tail then goes through QAWF.  Returns ``(value, error_estimate)``.
        """
        c, a = self.scale, self.index
        dens = lambda r: c * r ** (-1.0 - a)
        val, err = 0.0 + 0.0j, 0.0
        if lo < 1.0:
            v, e = _quad_complex(lambda r: g(r) * dens(r), lo, 1.0)
            val += v
            err += e
        if oscillation == 0.0:
            v, e = _quad_complex(lambda r: g(r) * dens(r), max(lo, 1.0), np.inf)
        else:
            y = oscillation
            re, e1 = integrate.quad(dens, 1.0, np.inf, weight="cos", wvar=y, limlst=100)
            im, e2 = integrate.quad(dens, 1.0, np.inf, weight="sin", wvar=y, limlst=100)
            v, e = complex(re - c / a, im), e1 + e2
        return val + v, err + e


LevyMeasure = Union[ZeroMeasure, FiniteAtoms, AxisStable]


def _quad_complex(f, lo, hi, limit=500):
    # a part that vanishes identically (e.g. Im for real lambda) needs an absolute floor
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re, e1 = integrate.quad(lambda r: complex(f(r)).real, lo, hi, epsabs=QUAD_ATOL,
                                epsrel=QUAD_RTOL, limit=limit)
        im, e2 = integrate.quad(lambda r: complex(f(r)).imag, lo, hi, epsabs=QUAD_ATOL,
                                epsrel=QUAD_RTOL, limit=limit)
    return complex(re, im), e1 + e2


def _project(mu: complex) -> complex:
    # the closed forms use the principal branch of (-mu)**a; keep -mu off the negative axis
    return complex(min(mu.real, 0.0), mu.imag)


# --- jump-part integrals of the branching mechanism -------------------------

def jump_integral(levy: LevyMeasure, lam: np.ndarray, i: int, method: str = "closed") -> complex:
    """``int (exp(<lam,z>) - 1 - lam_i z_i 1{|z|<=1}) levy(dz)`` for row ``i``."""
    if isinstance(levy, ZeroMeasure):
        return 0.0j
    if isinstance(levy, FiniteAtoms):
        z, w = levy.points, levy.masses
        if not len(w):
            return 0.0j
        expo = np.expm1(z @ lam)
        comp = lam[i] * z[:, i] * (levy.norms <= 1.0)
        return complex(np.sum(w * (expo - comp)))
    mu = complex(lam[levy.axis])
    own = levy.axis == i
    if method == "closed":
        return _stable_closed(levy, _project(mu), own)
    if method == "quad":
        return _stable_quad(levy, mu, own)[0]
    raise ValueError(f"unknown method {method!r}")


def _stable_closed(levy: AxisStable, mu: complex, own: bool) -> complex:
    c, a = levy.scale, levy.index
    if mu == 0:
        return 0.0j
    s = -mu
    if a < 1.0:
        val = c * gamma(-a) * s ** a
        if own:
            val -= mu * c / (1.0 - a)
        return val
    if not own:
        raise CBError("cross-axis stable measure with index >= 1 has no finite integral")
    if a == 1.0:
        return c * (s * np.log(s) + (np.euler_gamma - 1.0) * s)
    return c * gamma(-a) * s ** a + mu * c / (a - 1.0)


def _stable_series(levy: AxisStable, mu: complex, own: bool, delta: float) -> complex:
    # integral over (0, delta] from the Taylor expansion of the integrand
    c, a = levy.scale, levy.index
    if own:
        return c * (mu ** 2 / 2 * delta ** (2 - a) / (2 - a)
                    + mu ** 3 / 6 * delta ** (3 - a) / (3 - a))
    return c * (mu * delta ** (1 - a) / (1 - a) + mu ** 2 / 2 * delta ** (2 - a) / (2 - a))


def _stable_quad(levy: AxisStable, mu: complex, own: bool):
    if mu == 0:
        return 0.0j, 0.0
    delta = SERIES_CUTOFF

    def g(r):
        out = np.expm1(mu * r)
        if own and r <= 1.0:
            out -= mu * r
        return out

    oscillation = mu.imag if mu.real == 0.0 else 0.0
    val, err = levy.quad_integrate(g, delta, oscillation)
    val += _stable_series(levy, mu, own, delta)
    if err > 1e3 * QUAD_RTOL * max(1.0, abs(val)):
        if oscillation:
            warnings.warn(f"oscillatory quadrature error {err:.3e}", OscillatoryWarning)
        else:
            raise QuadratureError("stable jump integral did not converge", err)
    return val, err


def jump_integral_a_form(levy: LevyMeasure, lam: np.ndarray, i: int) -> complex:
    """Jump part in the ``lam_i z_i / (1 + |z|^2)`` compensated representation."""
    if isinstance(levy, ZeroMeasure):
        return 0.0j
    if isinstance(levy, FiniteAtoms):
        z, w = levy.points, levy.masses
        if not len(w):
            return 0.0j
        n = levy.norms
        return complex(np.sum(w * (np.expm1(z @ lam) - lam[i] * z[:, i] / (1.0 + n ** 2))))
    mu = complex(lam[levy.axis])
    if levy.axis != i:
        return _stable_quad(levy, mu, False)[0]
    if mu == 0:
        return 0.0j
    c, a, delta = levy.scale, levy.index, SERIES_CUTOFF
    g = lambda r: np.expm1(mu * r) - mu * r / (1.0 + r * r)
    oscillation = mu.imag if mu.real == 0.0 else 0.0
    if oscillation:
        # split off the bounded compensator so the tail stays a pure Fourier integral
        v1, _ = levy.quad_integrate(lambda r: np.expm1(mu * r) - mu * r * (r <= 1.0), delta,
                                    oscillation)
        v2, _ = _quad_complex(lambda r: mu * r * ((r <= 1.0) - 1.0 / (1.0 + r * r))
                              * c * r ** (-1 - a), delta, np.inf)
        val = v1 + v2
    else:
        val, _ = levy.quad_integrate(g, delta)
    series = c * (mu ** 2 / 2 * delta ** (2 - a) / (2 - a)
                  + (mu ** 3 / 6 + mu) * delta ** (3 - a) / (3 - a))
    return val + series


def a_to_alpha_shift(levy: LevyMeasure, i: int) -> float:
    """``int z_i (1{|z|<=1} - 1/(1+|z|^2)) levy(dz)``."""
    if isinstance(levy, ZeroMeasure):
        return 0.0
    if isinstance(levy, FiniteAtoms):
        if not len(levy.masses):
            return 0.0
        n = levy.norms
        return float(np.sum(levy.masses * levy.points[:, i] * ((n <= 1.0) - 1.0 / (1.0 + n ** 2))))
    if levy.axis != i:
        return 0.0
    c, a = levy.scale, levy.index
    lo, e1 = integrate.quad(lambda r: r ** (2 - a) / (1 + r * r), 0, 1, epsabs=0, epsrel=1e-12)
    hi, e2 = integrate.quad(lambda r: r ** (-a) / (1 + r * r), 1, np.inf, epsabs=0, epsrel=1e-12)
    if e1 + e2 > 1e-9:
        raise QuadratureError("a-form drift shift did not converge", e1 + e2)
    return c * (lo - hi)


# --- tail decomposition used by the simulator -------------------------------

@dataclass(frozen=True)
class TailServices:
    """Split of a Lévy measure at the cutoff ``eps``.

    ``compensator`` is ``int_{eps<|z|<=1} z dz``, ``small_jump_mean`` and
    ``small_jump_second_moment`` integrate ``z`` and ``z z^T`` over ``|z|<=eps``.
    """

    eps: float
    tail_mass: float
    compensator: np.ndarray
    small_jump_mean: np.ndarray
    small_jump_second_moment: np.ndarray
    _levy: LevyMeasure
    _m: int

    def jumps_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in ``(0, 1)`` to jumps of the normalised measure on ``|z|>eps``."""
        u = np.asarray(u, dtype=float)
        out = np.zeros((u.size, self._m))
        if u.size == 0:
            return out
        if self.tail_mass <= 0.0:
            raise CBError("cannot sample jumps: tail mass above the cutoff is zero")
        levy = self._levy
        if isinstance(levy, AxisStable):
            out[:, levy.axis] = self.eps * u ** (-1.0 / levy.index)
            return out
        keep = levy.norms > self.eps
        cdf = np.cumsum(levy.masses[keep])
        cdf /= cdf[-1]
        pick = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        return levy.points[keep][pick].copy()

    def sample_jump(self, rng: np.random.Generator) -> np.ndarray:
        return self.jumps_from_uniforms(rng.random(1))[0]


def levy_tail_services(levy: LevyMeasure, eps: float, m: int) -> TailServices:
    if not 0.0 < eps <= 1.0:
        raise CBError(f"cutoff eps must lie in (0, 1], got {eps}")
    comp = np.zeros(m)
    mean = np.zeros(m)
    second = np.zeros((m, m))
    if isinstance(levy, FiniteAtoms) and len(levy.masses):
        n, z, w = levy.norms, levy.points, levy.masses
        band = (n > eps) & (n <= 1.0)
        small = n <= eps
        comp = (w[band, None] * z[band]).sum(axis=0)
        mean = (w[small, None] * z[small]).sum(axis=0)
        second = np.einsum("n,ni,nj->ij", w[small], z[small], z[small])
    elif isinstance(levy, AxisStable):
        c, a, k = levy.scale, levy.index, levy.axis
        if a == 1.0:
            comp[k] = c * -math.log(eps)
        else:
            comp[k] = c * (1.0 - eps ** (1.0 - a)) / (1.0 - a)
        mean[k] = c * eps ** (1.0 - a) / (1.0 - a) if a < 1.0 else np.inf
        second[k, k] = c * eps ** (2.0 - a) / (2.0 - a)
    return TailServices(eps, levy.tail_mass(eps), comp, mean, second, levy, m)
