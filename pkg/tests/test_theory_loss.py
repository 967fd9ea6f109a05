import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metaalloc.maml_solver import TestConfig
from metaalloc.rng_models import TaskEnvironment, TaskSpec
from metaalloc.theory_loss import (
    HomogeneousLossParams,
    h_factor,
    homogeneous_g,
    homogeneous_shape,
    structure_functions,
    theory_test_loss_homogeneous,
    theory_test_loss_over,
    theory_test_loss_under,
)

NO_ADAPT_TEST = TestConfig(sigma_r=0.2, lambda_r=1.0, alpha_r=0.0)


def uniform(n, m, **kw):
    return [TaskSpec(n_train=n, n_val=n, **kw)] * m


class TestStructureFunctions:
    def test_alpha_zero_collapses(self):
        sf = structure_functions(TaskSpec(alpha=0.0, n_train=7), 30)
        assert (sf.h, sf.g1, sf.g2, sf.g3, sf.g4) == (1, 1, 1, 1, 1)

    def test_h_hand_value(self):
        # (1 - 0.3)^2 + 0.09 * 129 / 10
        assert h_factor(1.0, 0.3, 10, 128) == pytest.approx(0.49 + 0.09 * 12.9, rel=1e-15)

    def test_against_symbolic_expectations(self):
        sp = pytest.importorskip("sympy")
        n, p, a = sp.Integer(10), sp.Integer(5), sp.Rational(3, 10)
        # Wishart moment polynomials at lambda = 1
        m2 = n * (n + p + 1)
        m3 = n * (n**2 + p**2 + 3 * n * p + 3 * n + 3 * p + 4)
        m4 = n * (n**3 + p**3 + 6 * n**2 * p + 6 * n * p**2 + 6 * n**2 + 6 * p**2
                  + 17 * n * p + 21 * n + 21 * p + 20)
        m11 = n**2 * p + 2 * n
        m21 = n * (n**2 * p + n * p**2 + n * p + 4 * n + 4 * p + 4)
        m22 = n * (n**3 * p + n * p**3 + 2 * n**2 * p**2 + 2 * n**2 * p + 2 * n * p**2
                   + 8 * n**2 + 8 * p**2 + 21 * n * p + 20 * n + 20 * p + 20)
        # g1 = E[(I - aS/n) S/n (I - aS/n)] coefficient, etc., divided out
        g1 = 1 - 2 * a * m2 / n**2 + a**2 * m3 / n**3
        g2 = 1 - 2 * a * m11 / (p * n**2) + a**2 * m21 / (p * n**3)
        g3 = 1 - 4 * a + 6 * a**2 * m2 / n**2 - 4 * a**3 * m3 / n**3 + a**4 * m4 / n**4
        g4 = (1 - 4 * a + 2 * a**2 * m2 / n**2 + 4 * a**2 * m11 / (p * n**2)
              - 4 * a**3 * m21 / (p * n**3) + a**4 * m22 / (p * n**4))
        sf = structure_functions(TaskSpec(alpha=0.3, n_train=10), 5)
        for got, exact in zip((sf.g1, sf.g2, sf.g3, sf.g4), (g1, g2, g3, g4)):
            assert got == pytest.approx(float(exact), rel=1e-13)

    def test_large_p_limit_of_g(self):
        # at n = p -> inf the finite forms approach the homogeneous ones
        a = 0.3
        sf = structure_functions(TaskSpec(alpha=a, n_train=4000), 4000)
        for got, lim in zip((sf.g1, sf.g2, sf.g3, sf.g4), homogeneous_g(a, 1.0)):
            assert got == pytest.approx(lim, rel=5e-3)


class TestUnderparameterized:
    def test_alpha_zero_anchor(self):
        env = TaskEnvironment.constant(100, 0.05, 0.2)
        val = theory_test_loss_under(uniform(10, 10, sigma=0.2, alpha=0.0), env, NO_ADAPT_TEST)
        assert val == pytest.approx(0.0822, rel=1e-12)

    def test_permutation_is_bit_exact(self):
        env = TaskEnvironment.constant(128)
        alloc = [4, 16, 10, 7, 30, 2, 9, 50, 13, 11]
        base = theory_test_loss_under(
            [TaskSpec(n_train=n, n_val=n) for n in alloc], env, TestConfig())
        rnd = random.Random(0)
        for _ in range(20):
            rnd.shuffle(alloc)
            val = theory_test_loss_under(
                [TaskSpec(n_train=n, n_val=n) for n in alloc], env, TestConfig())
            assert val == base

    def test_rejects_overparameterized(self):
        env = TaskEnvironment.constant(100)
        with pytest.raises(ValueError):
            theory_test_loss_under(uniform(9, 10), env, TestConfig())

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 1.5), st.floats(0.3, 2.0), st.floats(0.0, 0.5),
           st.integers(1, 30), st.integers(5, 40))
    def test_positive(self, sigma, lam, alpha, n, m):
        env = TaskEnvironment.constant(16, 0.05, 0.2)
        tasks = uniform(n, m, sigma=sigma, lam=lam, alpha=alpha)
        if n * m < 16:
            return
        assert theory_test_loss_under(tasks, env, TestConfig()) > 0

    def test_heterogeneous_tasks_accepted(self):
        env = TaskEnvironment.constant(20)
        tasks = [TaskSpec(sigma=0.1, lam=1.0, alpha=0.2, n_train=5, n_val=8),
                 TaskSpec(sigma=1.0, lam=0.5, alpha=0.4, n_train=9, n_val=20)]
        assert math.isfinite(theory_test_loss_under(tasks, env, TestConfig()))


class TestOverparameterized:
    def test_alpha_zero_hand_value(self):
        # m = 2, n = 10, p = 100: frac = 0.2, noise sum = 2 * 0.04 * 10
        env = TaskEnvironment.constant(100, 0.05, 0.2)
        val = theory_test_loss_over(uniform(10, 2, alpha=0.0), env, NO_ADAPT_TEST, 0.5)
        expected = 0.02 + 0.5 * 0.8 * 0.5 + 0.02 * 1.2 + 0.8 / 200
        assert val == pytest.approx(expected, rel=1e-14)

    def test_rejects_underparameterized(self):
        env = TaskEnvironment.constant(10)
        with pytest.raises(ValueError):
            theory_test_loss_over(uniform(5, 2), env, TestConfig())

    def test_negative_distance(self):
        env = TaskEnvironment.constant(100)
        with pytest.raises(ValueError):
            theory_test_loss_over(uniform(5, 2), env, TestConfig(), -1.0)


class TestHomogeneous:
    def test_alpha_zero_anchor(self):
        params = HomogeneousLossParams(0.2, 0.0, 0.2, 100, 10, 2000, NO_ADAPT_TEST)
        assert theory_test_loss_homogeneous(params) == pytest.approx(0.0442, rel=1e-12)

    @given(st.floats(1, 200), st.floats(0.0, 0.6), st.floats(0.0, 2.0))
    def test_decreases_with_budget(self, n, a, s):
        vals = [theory_test_loss_homogeneous(
            HomogeneousLossParams(s, a, 0.2, 128, n, b)) for b in (2 * n, 4 * n, 40 * n)]
        assert vals[0] > vals[1] > vals[2]

    def test_shape_positive(self):
        xs = np.linspace(0.01, 3, 50)
        assert all(homogeneous_shape(0.3, 0.2, 0.2, x) > 0 for x in xs)

    def test_gap_to_general_form_shrinks(self):
        gaps = []
        for scale in (1, 4, 16):
            p, n = 32 * scale, 8 * scale
            m = 16
            env = TaskEnvironment.constant(p)
            general = theory_test_loss_under(uniform(n, m), env, TestConfig())
            simple = theory_test_loss_homogeneous(
                HomogeneousLossParams(0.2, 0.3, 0.2, p, n, 2 * n * m))
            gaps.append(abs(general - simple) / general)
        assert gaps[0] > gaps[1] > gaps[2]

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            HomogeneousLossParams(0.2, 0.3, 0.2, 100, 10, 10)
