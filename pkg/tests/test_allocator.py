import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metaalloc.allocator import (
    AllocationProblem,
    NoPositiveRootError,
    allocation_search_nonuniform,
    cardano_roots,
    cubic_coefficients,
    exact_vs_grid_gap,
    optimal_N_approx,
    optimal_n_exact,
    optimal_n_grid,
    round_to_grid,
    symmetry_certificate,
    theory_allocation_loss,
)
from metaalloc.maml_solver import TestConfig
from metaalloc.rng_models import TaskEnvironment, TaskSpec
from metaalloc.theory_loss import homogeneous_shape


class TestCubic:
    def test_default_coefficients(self):
        c = cubic_coefficients(0.3, 0.2, 0.2)
        np.testing.assert_allclose([c.A, c.B, c.C, c.D],
                                   [0.00470596, 0.00259308, 0.00486864, -0.00079056],
                                   rtol=1e-7)

    def test_unit_nu_example(self):
        c = cubic_coefficients(0.3, 0.0, 1.0)
        np.testing.assert_allclose([c.A, c.B, c.C, c.D],
                                   [0.117649, 0.064827, 0.076734, -0.013284], atol=5e-7)

    def test_is_derivative_of_shape(self):
        # the cubic vanishes where d shape / dx does
        sp = pytest.importorskip("sympy")
        x = sp.symbols("x", positive=True)
        a, s, v = sp.Rational(3, 10), sp.Rational(1, 5), sp.Rational(1, 5)
        r = 1 / x
        g1 = (1 - a) ** 2 - 2 * a * r + a**2 * (3 * r + r**2)
        g2 = (1 - a) ** 2 + a**2 * r
        g3 = (1 - a) ** 4 + 6 * a**2 * r - a**3 * (12 * r + 4 * r**2) + a**4 * (6 * r + 6 * r**2 + r**3)
        g4 = (1 - a) ** 4 + 2 * a**2 * r - 4 * a**3 * r + a**4 * (2 * r + r**2)
        shape = (s**2 * (g2 + a**2 * (g1 + g2 * r)) + v**2 * (x * g3 + g4)) / g2**2
        numer = sp.numer(sp.together(sp.diff(shape, x)))
        c = cubic_coefficients(0.3, 0.2, 0.2)
        cubic = c.A * x**3 + c.B * x**2 + c.C * x + c.D
        ratio = sp.simplify(numer / cubic)
        assert ratio.free_symbols <= {x}
        roots = [complex(r_) for r_ in sp.Poly(numer, x).nroots()]
        pos = [z.real for z in roots if abs(z.imag) < 1e-12 and z.real > 0]
        assert optimal_n_exact(0.3, 0.2, 0.2, 1).n_star == pytest.approx(pos[0], rel=1e-10)

    def test_alpha_zero_triple_root(self):
        with pytest.raises(NoPositiveRootError):
            optimal_n_exact(0.0, 0.2, 0.2, 128)

    @pytest.mark.parametrize("a", [0.01, 0.025, 0.05, 0.1])
    def test_single_real_root_for_small_alpha(self, a):
        assert cubic_coefficients(a, 0.2, 0.2).discriminant < 0

    @settings(max_examples=60)
    @given(st.floats(0.01, 0.6), st.floats(0.0, 2.0), st.floats(0.05, 2.0))
    def test_roots_have_small_residual(self, a, s, nu):
        c = cubic_coefficients(a, s, nu)
        scale = max(abs(c.A), abs(c.B), abs(c.C), abs(c.D))
        for x in cardano_roots(c):
            assert abs(c(x)) <= 1e-9 * scale * max(1.0, abs(x)) ** 3

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            cubic_coefficients(0.3, 0.2, 0.0)
        with pytest.raises(ValueError):
            optimal_n_exact(1.0, 0.2, 0.2, 128)


class TestExactOptimum:
    def test_default_value(self):
        sol = optimal_n_exact(0.3, 0.2, 0.2, 128)
        assert sol.n_star == pytest.approx(18.8998, abs=5e-4)
        assert sol.N_star == 2 * sol.n_star

    def test_minimises_shape(self):
        sol = optimal_n_exact(0.3, 0.2, 0.2, 128)
        x = sol.n_star / 128
        f = lambda t: homogeneous_shape(0.3, 0.2, 0.2, t)
        assert f(x) < f(0.9 * x) and f(x) < f(1.1 * x)

    @pytest.mark.parametrize("a, s", [(0.1, 0.0), (0.3, 0.2), (0.2, 1.0), (0.5, 0.5)])
    def test_near_integer_scan(self, a, s):
        assert exact_vs_grid_gap(a, s, 0.2, 128) <= 1


class TestApproximation:
    def test_example_value(self):
        expected = 2 * 2 ** (1 / 3) * 0.3 ** (4 / 3) * 128
        assert optimal_N_approx(0.3, 0.0, 0.2, 128) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(64.8, abs=0.05)

    def test_equal_noise_and_spread(self):
        expected = 2 * 4 ** (1 / 3) * 0.3 ** (4 / 3) * 128
        assert optimal_N_approx(0.3, 0.2, 0.2, 128) == pytest.approx(expected, rel=1e-14)

    def test_scaling(self):
        r = optimal_N_approx(0.2, 0.0, 0.2, 128) / optimal_N_approx(0.1, 0.0, 0.2, 128)
        assert r == pytest.approx(2 ** (4 / 3), rel=1e-12)


class TestGrid:
    def test_quadratic_argmin(self):
        opt = optimal_n_grid(lambda n: (n - 10) ** 2 + 1, 1000, range(1, 40))
        assert opt.n_star == 10 and opt.loss == 1

    def test_constant_prefers_smallest(self):
        assert optimal_n_grid(lambda n: 3.0, 64, [8, 2, 4]).n_star == 2

    def test_infeasible_skipped(self):
        opt = optimal_n_grid(lambda n: -n, 24, [3, 5, 6, 7])
        assert opt.skipped == (5, 7) and opt.n_star == 6

    def test_nothing_feasible(self):
        with pytest.raises(ValueError):
            optimal_n_grid(lambda n: 0, 10, [3, 4])

    def test_round_to_grid(self):
        # divisors of b/2 = 50: 1, 2, 5, 10, 25, 50
        assert round_to_grid(7.2, lambda n: abs(n - 7.2), 100) == 5
        assert round_to_grid(8.0, lambda n: abs(n - 8.0), 100) == 10


class TestNonuniform:
    ENV = TaskEnvironment.constant(8, 0.05, 0.2)

    def test_infeasible_problem(self):
        with pytest.raises(ValueError):
            AllocationProblem(5, (TaskSpec(),))
        with pytest.raises(ValueError):
            AllocationProblem(4, (TaskSpec(),) * 3)

    def test_exhaustive_finds_uniform(self):
        specs = (TaskSpec(),) * 3
        prob = AllocationProblem(24, specs)
        loss = theory_allocation_loss(specs, self.ENV, TestConfig())
        assert allocation_search_nonuniform(prob, loss, "exhaustive") == (4, 4, 4)

    def test_descent_matches_exhaustive(self):
        specs = (TaskSpec(sigma=0.1), TaskSpec(sigma=1.0), TaskSpec(sigma=0.5))
        prob = AllocationProblem(30, specs)
        loss = theory_allocation_loss(specs, self.ENV, TestConfig())
        ex = allocation_search_nonuniform(prob, loss, "exhaustive")
        de = allocation_search_nonuniform(prob, loss, "descent")
        assert loss(de) == pytest.approx(loss(ex), rel=1e-12)

    def test_unknown_method(self):
        prob = AllocationProblem(24, (TaskSpec(),) * 3)
        with pytest.raises(ValueError):
            allocation_search_nonuniform(prob, lambda a: 0.0, "anneal")


class TestSymmetry:
    def test_homogeneous_certificate(self):
        env = TaskEnvironment.constant(32)
        tasks = [TaskSpec()] * 6
        ok, rep = symmetry_certificate(tasks, [3, 9, 5, 12, 4, 7], 50, env, TestConfig())
        assert ok and rep.permutations_checked == 50 and rep.pairs_checked == 50

    def test_not_applicable(self):
        env = TaskEnvironment.constant(8)
        ok, rep = symmetry_certificate([TaskSpec(), TaskSpec(sigma=1.0)], [5, 5], 5,
                                       env, TestConfig())
        assert not ok and not rep.applicable
