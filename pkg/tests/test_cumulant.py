import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from cbprocess import (
    BranchingMechanism,
    CBError,
    DomainError,
    FiniteAtoms,
    Row,
    conservativeness_verdict,
    grey_diagnostics,
    integral_form_residual,
    laplace_transform,
    minimal_solution_at_zero,
    nonuniqueness_residual,
    semigroup_defect,
    solve_cumulant,
    stable_mechanism,
    survival_mass,
)
from conftest import random_atoms_mechanism

GRID = np.round(np.arange(1, 51) * 0.1, 10)


def minimal_closed(sigma, alpha, t):
    return -(sigma * (1 - alpha) * t) ** (1 / (1 - alpha))


class TestSolve:
    def test_exponential_flow(self):
        flow = solve_cumulant(stable_mechanism(1.0, 1.0), [-1.0], 5.0, grid=[0.5, 1.0, 5.0])
        assert np.allclose(flow.values[1:, 0].real, -np.exp([0.5, 1.0, 5.0]), rtol=1e-9)

    def test_half_stable_flow(self, half_stable):
        flow = solve_cumulant(half_stable, [-1.0], 5.0, grid=GRID)
        assert np.allclose(flow.values[1:, 0], -(GRID + 1) ** 2, rtol=1e-9)

    def test_initial_value_is_exact(self, two_dim_stable):
        lam = np.array([-0.3 + 0.7j, -1.1])
        flow = solve_cumulant(two_dim_stable, lam, 1.0)
        assert np.array_equal(flow.values[0], lam)
        assert np.array_equal(flow.lambda0, lam)

    def test_zero_is_fixed(self, feller, half_stable, single_atom):
        for mech in (feller, half_stable, single_atom):
            flow = solve_cumulant(mech, 0.0, 2.0, grid=10)
            assert np.max(np.abs(flow.values)) < 1e-12

    @pytest.mark.parametrize("t", [0.5, 1.0])
    def test_linear_matrix_exponential(self, t):
        B = np.array([[-1.0, 0.5], [0.3, -2.0]])
        mech = BranchingMechanism((Row(tuple(B[0])), Row(tuple(B[1]))))
        lam = np.array([-1.0, -1.0])
        flow = solve_cumulant(mech, lam, t)
        assert np.allclose(flow.values[-1], expm(t * B) @ lam, rtol=1e-9)

    def test_feller_riccati(self, feller):
        times = np.linspace(0, 3, 13)
        flow = solve_cumulant(feller, [-1.0 + 0.5j], 3.0, grid=times[1:])
        lam = -1.0 + 0.5j
        assert np.allclose(flow.values[:, 0], lam / (1 - lam * times), rtol=1e-9)

    def test_grid_options(self, feller):
        assert solve_cumulant(feller, -1.0, 2.0).times.tolist() == [0.0, 2.0]
        assert solve_cumulant(feller, -1.0, 2.0, grid=4).times.tolist() == [0, .5, 1, 1.5, 2]
        flow = solve_cumulant(feller, -1.0, 2.0, grid=[0.5, 2.0])
        assert flow.times.tolist() == [0.0, 0.5, 2.0]
        assert flow.at(0.5) == pytest.approx(-1 / 1.5)
        with pytest.raises(KeyError):
            flow.at(0.7)
        with pytest.raises(CBError):
            solve_cumulant(feller, -1.0, 2.0, grid=[1.0, 0.5])

    def test_bad_inputs(self, feller):
        with pytest.raises(CBError):
            solve_cumulant(feller, -1.0, 0.0)
        with pytest.raises(DomainError):
            solve_cumulant(feller, 0.5, 1.0)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_domain_and_integral_form(self, seed):
        rng = np.random.default_rng(seed)
        mech = random_atoms_mechanism(rng)
        lam = -2.0 * rng.random(mech.m) + 1j * rng.normal(size=mech.m)
        flow = solve_cumulant(mech, lam, 1.0, grid=40)
        assert np.all(flow.values.real <= 0)
        assert integral_form_residual(mech, flow) <= 10 * 1e-9 * max(1.0, np.abs(flow.values).max())

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_monotone_in_lambda(self, seed):
        rng = np.random.default_rng(seed)
        mech = random_atoms_mechanism(rng)
        lo = -3.0 * rng.random(mech.m)
        hi = lo * rng.random(mech.m)  # lo <= hi <= 0
        k_lo = solve_cumulant(mech, lo, 1.0, grid=5).values.real
        k_hi = solve_cumulant(mech, hi, 1.0, grid=5).values.real
        assert np.all(k_lo <= k_hi + 1e-9)


class TestSemigroup:
    def test_exponential_flow(self):
        assert semigroup_defect(stable_mechanism(1.0, 1.0), [-1.0], 1.0, 1.0) <= 1e-8

    def test_zero(self, two_dim_stable):
        assert semigroup_defect(two_dim_stable, 0.0, 0.5, 0.5) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_random_atoms(self, seed):
        mech = random_atoms_mechanism(np.random.default_rng(seed), m=2)
        assert semigroup_defect(mech, [-1.0, -0.5], 0.3, 0.7) <= 1e-6

    def test_stable_two_dim(self, two_dim_stable):
        assert semigroup_defect(two_dim_stable, [-1.0 + 1j, -0.4], 0.4, 0.6) <= 1e-6


class TestMinimal:
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_stable_closed_form(self, alpha):
        res = minimal_solution_at_zero(stable_mechanism(1.0, alpha), 2.0, grid=[0.5, 1.0, 2.0])
        assert res.converged
        for t, v in zip(res.times[1:], res.values[1:, 0]):
            assert abs(v.real - minimal_closed(1.0, alpha, t)) <= 1e-6

    def test_half_stable_at_one(self, half_stable):
        res = minimal_solution_at_zero(half_stable, 1.0, grid=None)
        assert res.values[-1, 0].real == pytest.approx(-1.0, abs=1e-7)

    def test_conservative_is_zero(self):
        res = minimal_solution_at_zero(stable_mechanism(1.0, 1.0), 3.0)
        assert res.converged and np.max(np.abs(res.values)) < 1e-12

    def test_smallest_magnitude_of_sequence(self, half_stable):
        # K(t, -eps) increases as eps decreases, so the limit has the least magnitude
        res = minimal_solution_at_zero(half_stable, 2.0, grid=8)
        assert np.all(np.abs(res.values) <= np.abs(res.previous.values) + 1e-12)

    def test_non_stall_is_flagged(self):
        res = minimal_solution_at_zero(stable_mechanism(1.0, 0.8), 1.0, grid=4, ks=(4, 5, 6))
        assert not res.converged and res.gap > 1e-9 and res.k == 6


class TestVerdict:
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_non_conservative(self, alpha):
        v = conservativeness_verdict(stable_mechanism(1.0, alpha), 10.0)
        assert v.verdict == "non-conservative"
        assert v.grey_exponent == pytest.approx(alpha, abs=1e-3)

    def test_alpha_one(self):
        v = conservativeness_verdict(stable_mechanism(1.0, 1.0), 10.0)
        assert v.verdict == "conservative-evidence"
        p = np.array(v.grey_partial_integrals)
        assert np.allclose(np.diff(p), math.log(10), rtol=1e-6)

    def test_single_atom(self, single_atom):
        for lam in np.linspace(1e-3, 0.1, 25):
            assert single_atom_h(single_atom, lam) >= 0
        assert conservativeness_verdict(single_atom, 5.0).verdict == "conservative-evidence"
        exponent, partials = grey_diagnostics(single_atom)
        assert exponent == math.inf and partials[-1] == math.inf

    def test_multi_dim_uses_minimal_only(self, two_dim_stable):
        mech = BranchingMechanism((Row((-1.0, 0.5)), Row((0.2, -1.0), 1.0)))
        v = conservativeness_verdict(mech, 2.0)
        assert v.verdict == "conservative-evidence" and v.grey_exponent is None
        with pytest.raises(CBError):
            grey_diagnostics(mech)

    def test_to_dict(self):
        d = conservativeness_verdict(stable_mechanism(1.0, 0.5), 1.0).to_dict()
        assert set(d) == {"verdict", "minimal_sup", "minimal_converged", "grey_exponent",
                          "grey_partial_integrals"}


def single_atom_h(mech, lam):
    from cbprocess import eval_mechanism
    return eval_mechanism(mech, [-lam])[0].real


class TestTransforms:
    def test_half_stable_laplace(self, half_stable):
        assert laplace_transform(half_stable, 1.0, 1.0, -1.0).real == pytest.approx(
            math.exp(-4), rel=1e-9)

    def test_time_zero_and_zero_state(self, two_dim_stable):
        lam = [-0.5 + 1j, -2.0]
        x = [1.5, 0.5]
        assert laplace_transform(two_dim_stable, x, 0.0, lam) == pytest.approx(
            np.exp(np.dot(lam, x)), rel=1e-15)
        assert laplace_transform(two_dim_stable, [0, 0], 1.0, lam) == 1.0

    def test_survival(self, half_stable, feller):
        s1 = survival_mass(half_stable, 1.0, 1.0)
        assert s1.converged and float(s1) == pytest.approx(math.exp(-1), rel=1e-7)
        s2 = survival_mass(half_stable, 2.0, 1.0)
        assert s2.value == pytest.approx(s1.value ** 2, rel=1e-12)
        assert survival_mass(feller, 1.0, 1.0).value == pytest.approx(1.0, abs=1e-12)

    def test_rejects_negative_state(self, feller):
        with pytest.raises(DomainError):
            laplace_transform(feller, -1.0, 1.0, -1.0)


class TestNonUniqueness:
    @pytest.mark.parametrize("r", [0.0, 0.5, 1.0, 2.0, math.inf])
    def test_family(self, r):
        assert nonuniqueness_residual(r, 3.0) <= 1e-9

    def test_r_zero_is_minimal(self, half_stable):
        res = minimal_solution_at_zero(half_stable, 3.0, grid=30)
        assert np.allclose(res.values[:, 0].real, -res.times ** 2, atol=1e-7)

    def test_wrong_family_member_fails(self):
        # -(t - r)^2 is not a solution for a mechanism with a different scale
        assert nonuniqueness_residual(1.0, 3.0, stable_mechanism(1.0, 0.5)) > 1e-2
