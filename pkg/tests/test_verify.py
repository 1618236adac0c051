import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbprocess import (
    BranchingMechanism,
    DomainError,
    FiniteAtoms,
    Row,
    SimConfig,
    TestFunction,
    VerificationReport,
    branching_property_check,
    dynkin_residual,
    eval_mechanism,
    generator_apply,
    generator_report,
    martingale_residual,
    monte_carlo_laplace,
    semigroup_report,
    solve_cumulant,
)
from cbprocess.verify import mean_and_se
from conftest import random_atoms_mechanism

CFG = SimConfig(dt=1e-2, master_seed=5)


@pytest.fixture
def linear():
    return BranchingMechanism((Row((-1.0, 0.5)), Row((0.3, -2.0))))


class TestReport:
    @given(st.complex_numbers(max_magnitude=10), st.complex_numbers(max_magnitude=10),
           st.floats(0, 10), st.floats(0.5, 5))
    def test_pass_recomputable(self, est, ref, se, k):
        r = VerificationReport("x", est, ref, se, 10, k)
        d = json.loads(r.to_json())
        assert d["pass"] == (abs(complex(*d["estimate"]) - complex(*d["reference"]))
                             <= d["k"] * d["std_error"])

    def test_json_keys(self):
        d = VerificationReport("laplace", 1 + 2j, 1.0, 0.1, 7).to_dict()
        assert set(d) == {"statistic", "estimate", "reference", "std_error", "n_paths", "k",
                          "pass", "meta"}
        assert d["estimate"] == [1.0, 2.0] and d["k"] == 3.0

    def test_mean_and_se(self):
        assert mean_and_se(np.full(10, 0.1 + 0.2j)) == (0.1 + 0.2j, 0.0)
        x = np.random.default_rng(0).normal(size=1000)
        mean, se = mean_and_se(x)
        assert mean == pytest.approx(x.mean(), abs=1e-15)
        assert se == pytest.approx(x.std(ddof=1) / math.sqrt(1000), rel=1e-12)


class TestLaplace:
    def test_time_zero_exact(self, feller):
        r = monte_carlo_laplace(feller, 1.0, 0.0, -1.0, 100, CFG)
        assert r.estimate == r.reference == pytest.approx(math.exp(-1)) and r.std_error == 0

    def test_feller_reference(self, feller):
        # scalar Riccati dK/dt = K^2 gives K(t, lam) = lam / (1 - lam t)
        flow = solve_cumulant(feller, -1.0, 1.0)
        assert flow.values[-1, 0].real == pytest.approx(-0.5, rel=1e-10)
        r = monte_carlo_laplace(feller, 1.0, 1.0, -1.0, 4000, SimConfig(dt=1e-2))
        assert r.reference.real == pytest.approx(math.exp(-0.5), rel=1e-10)
        assert r.passed and r.statistic == "laplace"

    def test_deterministic_mech_has_no_variance(self, linear):
        r = monte_carlo_laplace(linear, [1, 1], 0.5, [-1, -1], 50, CFG)
        assert r.std_error == 0.0

    def test_survival_statistic(self, half_stable):
        r = monte_carlo_laplace(half_stable, 1.0, 1.0, 0.0, 500, SimConfig(dt=1e-2, eps=1e-3))
        assert r.statistic == "survival"
        assert r.reference.real == pytest.approx(math.exp(-1), rel=1e-7)

    def test_rejects_boundary(self, feller):
        with pytest.raises(DomainError):
            monte_carlo_laplace(feller, 1.0, 1.0, 1j, 10, CFG)

    def test_std_error_scaling(self, feller):
        small = monte_carlo_laplace(feller, 1.0, 1.0, -1.0, 5000, CFG)
        big = monte_carlo_laplace(feller, 1.0, 1.0, -1.0, 20000, CFG)
        assert small.std_error / big.std_error == pytest.approx(2.0, rel=0.2)

    def test_meta_digest_tracks_config(self, feller):
        a = monte_carlo_laplace(feller, 1.0, 0.1, -1.0, 10, CFG)
        b = monte_carlo_laplace(feller, 1.0, 0.1, -1.0, 10, SimConfig(dt=1e-2, master_seed=6))
        assert a.meta["config"] != b.meta["config"]


class TestMartingale:
    def test_deterministic_mech_is_constant(self, linear):
        cfg = SimConfig(dt=1e-4)
        reports = martingale_residual(linear, [1, 2], [-1, -0.5], 1.0, [0, 0.3, 1.0], 5, cfg)
        for r in reports:
            assert r.std_error == 0
            assert abs(r.estimate - r.reference) < 10 * cfg.dt  # Euler bias only

    def test_last_checkpoint_is_laplace(self, feller):
        reports = martingale_residual(feller, 1.0, -1.0, 1.0, [0, 1.0], 2000, CFG)
        lap = monte_carlo_laplace(feller, 1.0, 1.0, -1.0, 2000, CFG)
        assert reports[-1].estimate == lap.estimate
        assert reports[0].std_error == 0 and reports[0].estimate == pytest.approx(
            reports[0].reference, rel=1e-15)

    def test_checkpoints_inside(self, feller):
        with pytest.raises(DomainError):
            martingale_residual(feller, 1.0, -1.0, 1.0, [0, 1.5], 10, CFG)


class TestGenerator:
    def test_single_atom(self, single_atom):
        f = TestFunction.exponential(single_atom, -1.0)
        assert generator_apply(single_atom, f, [1.0]) == pytest.approx(math.exp(-2), rel=1e-12)

    def test_zero_state_and_zero_lambda(self, two_dim_stable):
        f = TestFunction.exponential(two_dim_stable, [-1.0, -0.5])
        assert generator_apply(two_dim_stable, f, [0.0, 0.0]) == 0
        g = TestFunction.exponential(two_dim_stable, 0.0)
        assert abs(generator_apply(two_dim_stable, g, [1.0, 2.0])) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_atoms_within_1e6(self, seed):
        rng = np.random.default_rng(seed)
        mech = random_atoms_mechanism(rng)
        r = generator_report(mech, -2 * rng.random(mech.m), 2 * rng.random(mech.m))
        assert r.passed
        assert abs(r.estimate - r.reference) <= 1e-6 * abs(r.reference) + 1e-14

    @pytest.mark.parametrize("lam", [[-1.0, -0.5], [-0.3 + 2j, -1 + 1j], [-5.0, -3.0]])
    def test_stable_within_1e5(self, two_dim_stable, lam):
        r = generator_report(two_dim_stable, lam, [0.7, 1.3])
        assert r.passed and r.k == 1.0

    def test_time_exponential_cancels(self, feller):
        f = TestFunction.time_exponential(feller, -1.0, 1.0, 1e-2)
        X = np.array([[0.3], [1.0], [2.5]])
        for t in (0.0, 0.5, 1.0):
            total = f.time_derivative(t, X) + f.generator_closed(t, X)
            assert np.max(np.abs(total)) < 1e-12


class TestDynkin:
    def test_deterministic_exponential(self, linear):
        f = TestFunction.exponential(linear, [-1.0, -0.5])
        cfg = SimConfig(dt=1e-4)
        for r in dynkin_residual(linear, [1, 2], f, 1.0, [0.5, 1.0], 3, cfg):
            assert r.std_error == 0 and abs(r.estimate) < 10 * cfg.dt

    def test_equivalent_to_martingale(self, feller):
        cfg = SimConfig(dt=1e-2, master_seed=8)
        f = TestFunction.time_exponential(feller, -1.0, 1.0, cfg.dt)
        dyn = dynkin_residual(feller, 1.0, f, 1.0, [0.5, 1.0], 2000, cfg)
        mart = martingale_residual(feller, 1.0, -1.0, 1.0, [0.5, 1.0], 2000, cfg)
        for d, m in zip(dyn, mart):
            # same statistic up to the constant reference shift
            assert abs(d.estimate - (m.estimate - m.reference)) < 1e-6
            assert d.std_error == pytest.approx(m.std_error, rel=1e-6)

    def test_feller_exponential(self, feller):
        f = TestFunction.exponential(feller, -1.0)
        for r in dynkin_residual(feller, 1.0, f, 1.0, [0, 0.5, 1.0], 4000, CFG):
            assert r.passed


class TestBranching:
    def test_deterministic_exact(self, linear):
        r = branching_property_check(linear, [0.5, 0.5], [0.2, 0.1], 0.5, [-1, -1], 4, CFG)
        assert r.std_error == 0 and abs(r.estimate - r.reference) < 1e-3

    def test_y_zero_reduces_to_laplace(self, feller):
        r = branching_property_check(feller, 0.7, 0.0, 1.0, -1.0, 1000, CFG)
        lap = monte_carlo_laplace(feller, 0.7, 1.0, -1.0, 1000, CFG)
        assert r.estimate == lap.estimate and r.reference == lap.reference


class TestSemigroupReport:
    def test_atoms(self):
        mech = BranchingMechanism((Row((-0.5,), 0.2, FiniteAtoms((((0.3,), 1.0),))),))
        r = semigroup_report(mech, -1.0, 0.3, 0.7)
        assert r.passed and r.n_paths == 0 and r.k == 1.0
