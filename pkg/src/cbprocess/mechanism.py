"""Branching mechanisms and the evaluation of H."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import gamma

from .errors import ConfigError, DomainError, InvalidMechanismError
from .levy import (
    AxisStable,
    FiniteAtoms,
    LevyMeasure,
    ZeroMeasure,
    a_to_alpha_shift,
    jump_integral,
    jump_integral_a_form,
)


def left_half_point(values, m: int | None = None) -> np.ndarray:
    """Return ``values`` as a complex vector in the closed left half-plane.

    Scalars are broadcast to length ``m`` when ``m`` is given.
    """
    lam = np.atleast_1d(np.asarray(values, dtype=complex)).copy()
    if m is not None and lam.size == 1 and m > 1:
        lam = np.full(m, lam[0])
    if lam.ndim != 1 or lam.size == 0:
        raise DomainError("lambda must be a non-empty vector")
    if m is not None and lam.size != m:
        raise DomainError(f"lambda has length {lam.size}, expected {m}")
    if not np.all(np.isfinite(lam)):
        raise DomainError("lambda must be finite")
    if np.any(lam.real > 0):
        raise DomainError(f"lambda must have nonpositive real parts, got {lam}")
    return lam


@dataclass(frozen=True)
class Row:
    """Parameters ``(alpha_i, beta_i, pi_i)`` of one coordinate."""

    alpha: tuple
    beta: float = 0.0
    levy: LevyMeasure = field(default_factory=ZeroMeasure)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", float(self.beta))


@dataclass(frozen=True)
class Violation:
    coordinate: int  # 1-based
    rule: str
    value: object

    def to_dict(self):
        return {"coordinate": self.coordinate, "rule": self.rule, "value": self.value}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"pass": self.passed, "violations": [v.to_dict() for v in self.violations]}


@dataclass(frozen=True)
class BranchingMechanism:
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    @property
    def m(self) -> int:
        return len(self.rows)

    @cached_property
    def drift_matrix(self) -> np.ndarray:
        """``B[i, j] = alpha_ij``."""
        return np.array([r.alpha for r in self.rows], dtype=float)

    @cached_property
    def betas(self) -> np.ndarray:
        return np.array([r.beta for r in self.rows], dtype=float)

    @cached_property
    def validation(self) -> ValidationReport:
        return validate_mechanism(self)

    def check(self):
        if not self.validation.passed:
            v = self.validation.violations
            raise InvalidMechanismError(
                "; ".join(f"coordinate {x.coordinate}: {x.rule} ({x.value})" for x in v), v)
        return self

    @cached_property
    def is_finite_activity(self) -> bool:
        return all(not isinstance(r.levy, AxisStable) for r in self.rows)

    # JSON ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "BranchingMechanism":
        try:
            if d.get("type") == "stable":
                return stable_mechanism(float(d["sigma"]), float(d["alpha"]))
            m = int(d["m"])
            rows = []
            for r in d["rows"]:
                rows.append(Row(r["alpha"], r.get("beta", 0.0), _levy_from_dict(r.get("levy"))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed mechanism config: {exc!r}") from exc
        if len(rows) != m:
            raise ConfigError(f"mechanism declares m={m} but has {len(rows)} rows")
        return cls(tuple(rows))

    def to_dict(self) -> dict:
        return {"m": self.m, "rows": [
            {"alpha": list(r.alpha), "beta": r.beta, "levy": _levy_to_dict(r.levy)}
            for r in self.rows]}


def _levy_from_dict(d) -> LevyMeasure:
    if d is None or d.get("type") == "zero":
        return ZeroMeasure()
    kind = d["type"]
    if kind == "finite_atoms":
        return FiniteAtoms(tuple((a["z"], a["mass"]) for a in d["atoms"]))
    if kind == "axis_stable":
        return AxisStable(int(d["axis"]) - 1, float(d["alpha"]), float(d["scale"]))
    raise ConfigError(f"unknown levy type {kind!r}")


def _levy_to_dict(levy: LevyMeasure) -> dict:
    if isinstance(levy, FiniteAtoms):
        return {"type": "finite_atoms",
                "atoms": [{"z": list(z), "mass": w} for z, w in levy.atoms]}
    if isinstance(levy, AxisStable):
        return {"type": "axis_stable", "axis": levy.axis + 1, "alpha": levy.index,
                "scale": levy.scale}
    return {"type": "zero"}


def validate_mechanism(mech: BranchingMechanism) -> ValidationReport:
    """Check admissibility; every failure is reported, nothing is raised."""
    out = []
    m = mech.m
    if m < 1:
        return ValidationReport((Violation(0, "empty mechanism", m),))
    for i, row in enumerate(mech.rows):
        c = i + 1
        if len(row.alpha) != m:
            out.append(Violation(c, "dimension mismatch", len(row.alpha)))
        elif not all(math.isfinite(a) for a in row.alpha):
            out.append(Violation(c, "non-finite parameter", list(row.alpha)))
        else:
            for j, a in enumerate(row.alpha):
                if j != i and a < 0:
                    out.append(Violation(c, "off-diagonal drift negative",
                                         {"j": j + 1, "alpha": a}))
        if not (math.isfinite(row.beta) and row.beta >= 0):
            out.append(Violation(c, "negative diffusion", row.beta))
        levy = row.levy
        if isinstance(levy, FiniteAtoms):
            for z, w in levy.atoms:
                if len(z) != m:
                    out.append(Violation(c, "dimension mismatch", list(z)))
                elif any(v < 0 or not math.isfinite(v) for v in z):
                    out.append(Violation(c, "atom outside orthant", list(z)))
                elif not any(v > 0 for v in z):
                    out.append(Violation(c, "atom at origin", list(z)))
                if not (math.isfinite(w) and w > 0):
                    out.append(Violation(c, "nonpositive atom mass", w))
        elif isinstance(levy, AxisStable):
            if not 0 <= levy.axis < m:
                out.append(Violation(c, "axis out of range", levy.axis + 1))
            if not 0.0 < levy.index < 2.0:
                out.append(Violation(c, "stable index out of range", levy.index))
            elif levy.axis != i and levy.index >= 1.0:
                # int (z_axis ^ 1) pi(dz) = int_0^1 r c r^(-1-index) dr diverges
                out.append(Violation(c, "cross-axis first-moment divergence", levy.index))
            if not (math.isfinite(levy.scale) and levy.scale > 0):
                out.append(Violation(c, "nonpositive stable scale", levy.scale))
        elif not isinstance(levy, ZeroMeasure):
            out.append(Violation(c, "unknown levy measure", type(levy).__name__))
    return ValidationReport(tuple(out))


def eval_mechanism(mech: BranchingMechanism, lam, method: str = "closed") -> np.ndarray:
    """Evaluate ``H(lam)`` in the ``alpha``-representation.

    ``method="closed"`` uses the Gamma-function form of the stable integrals,
    ``method="quad"`` adaptive quadrature with a series near the origin.
    Finite-atom integrals are exact sums either way.
    """
    mech.check()
    lam = left_half_point(lam, mech.m)
    return _eval(mech, lam, method)


def _eval(mech, lam, method="closed"):
    B = mech.drift_matrix
    out = B @ lam + 0.5 * mech.betas * lam * lam
    for i, row in enumerate(mech.rows):
        if not isinstance(row.levy, ZeroMeasure):
            out[i] += jump_integral(row.levy, lam, i, method)
    return out


def eval_a_form(a_rows: Sequence[Sequence[float]], betas, levies, lam) -> np.ndarray:
    """``H(lam)`` from the ``a``-representation with ``z_i / (1+|z|^2)`` compensation."""
    lam = left_half_point(lam, len(a_rows))
    out = np.empty(len(a_rows), dtype=complex)
    for i, (a, b, levy) in enumerate(zip(a_rows, betas, levies)):
        out[i] = (np.dot(a, lam) + 0.5 * b * lam[i] ** 2
                  + jump_integral_a_form(levy, lam, i))
    return out


def convert_a_to_alpha(a_row, levy: LevyMeasure, i: int) -> np.ndarray:
    """Drift row of the ``alpha``-form; only the diagonal entry moves."""
    alpha = np.array(a_row, dtype=float)
    alpha[i] += a_to_alpha_shift(levy, i)
    return alpha


def stable_constant(sigma: float, alpha: float) -> float:
    """Scale ``c`` with ``int_0^inf (e^{lam r} - 1) c r^{-1-alpha} dr = -sigma (-lam)^alpha``."""
    return sigma * alpha / gamma(1.0 - alpha)


def stable_mechanism(sigma: float, alpha: float) -> BranchingMechanism:
    """One-dimensional mechanism with ``H(lam) = -sigma (-lam)**alpha``."""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"stable index must lie in (0, 1], got {alpha}")
    if alpha == 1.0:
        return BranchingMechanism((Row((sigma,)),))
    c = stable_constant(sigma, alpha)
    # drift c/(1-alpha) cancels the 1{r<=1} compensation of the jump integral
    return BranchingMechanism((Row((c / (1.0 - alpha),), 0.0, AxisStable(0, alpha, c)),))
