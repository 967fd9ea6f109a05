"""Analytic average test loss of one-step MAML on mixed linear regression.

Three evaluators:

* :func:`theory_test_loss_under` -- general non-homogeneous tasks,
  ``sum(n_val) >= p``.
* :func:`theory_test_loss_over` -- ``sum(n_val) < p``, depends on the
  distance between the outer-loop initialisation and the task mean.
* :func:`theory_test_loss_homogeneous` -- identical tasks with a uniform
  allocation ``b = 2 n m`` in the large-``p`` limit; depends on ``n`` only
  through ``n/p``.

Per-task contributions are summed with :func:`math.fsum`, which is correctly
rounded and therefore independent of task order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .maml_solver import TestConfig
from .rng_models import TaskEnvironment, TaskSpec, mu_coefficients


@dataclass(frozen=True)
class StructureFactors:
    h: float
    g1: float
    g2: float
    g3: float
    g4: float
    mu2: float
    mu3: float
    mu4: float
    mu11: float
    mu21: float
    mu22: float


def h_factor(lam: float, alpha: float, n: float, p: int) -> float:
    a = lam**2 * alpha
    return (1 - a) ** 2 + a**2 * (p + 1) / n


def structure_functions(spec: TaskSpec, p: int) -> StructureFactors:
    a = spec.lam**2 * spec.alpha
    mu = mu_coefficients(spec.n_train, p)
    g1 = 1 - 2 * a * mu.mu2 + a**2 * mu.mu3
    g2 = 1 - 2 * a * mu.mu11 + a**2 * mu.mu21
    g3 = 1 - 4 * a + 6 * a**2 * mu.mu2 - 4 * a**3 * mu.mu3 + a**4 * mu.mu4
    g4 = (
        1 - 4 * a + 2 * a**2 * mu.mu2 + 4 * a**2 * mu.mu11
        - 4 * a**3 * mu.mu21 + a**4 * mu.mu22
    )
    return StructureFactors(
        h_factor(spec.lam, spec.alpha, spec.n_train, p),
        g1, g2, g3, g4,
        mu.mu2, mu.mu3, mu.mu4, mu.mu11, mu.mu21, mu.mu22,
    )


def _test_terms(test: TestConfig, p: int) -> tuple[float, float]:
    """(label-noise term, ``lambda_r^2 h_r``) shared by all evaluators."""
    ar = test.lambda_r**2 * test.alpha_r
    noise = test.sigma_r**2 / 2 * (1 + ar**2 * p / test.n_r)
    return noise, test.lambda_r**2 * h_factor(test.lambda_r, test.alpha_r, test.n_r, p)


def _total_val(tasks: Sequence[TaskSpec]) -> int:
    if not tasks:
        raise ValueError("at least one task is required")
    return sum(int(t.n_val) for t in tasks)


def theory_test_loss_under(
    tasks: Sequence[TaskSpec], env: TaskEnvironment, test: TestConfig
) -> float:
    """Average test loss in the underparameterized regime, remainder dropped.

    The boundary ``sum(n_val) == p`` is accepted; the formula stays finite there.
    """
    p = env.p
    if _total_val(tasks) < p:
        raise ValueError(
            f"underparameterized formula needs sum(n_val) >= p; got {_total_val(tasks)} < {p}"
        )
    nu2 = env.nu**2
    curvature, variance = [], []
    for t in tasks:
        sf = structure_functions(t, p)
        l2 = t.lam**2
        a2 = (l2 * t.alpha) ** 2
        noise = t.sigma**2 * (sf.h + a2 / t.n_train * ((t.n_val + 1) * sf.g1 + p * sf.g2))
        spread = nu2 / p * l2 * ((t.n_val + 1) * sf.g3 + p * sf.g4)
        curvature.append(l2 * sf.h)
        variance.append(l2 / t.n_val * (noise + spread))
    noise_r, lh_r = _test_terms(test, p)
    omega_var = p * math.fsum(variance) / math.fsum(curvature) ** 2
    return noise_r + lh_r * nu2 / 2 + lh_r * omega_var / 2


def theory_test_loss_over(
    tasks: Sequence[TaskSpec],
    env: TaskEnvironment,
    test: TestConfig,
    omega0_dist: float = 0.0,
) -> float:
    """Average test loss in the overparameterized regime.

    ``omega0_dist`` is ``|omega0 - theta0|^2`` for the initialisation of the
    outer optimisation.
    """
    p = env.p
    total = _total_val(tasks)
    if total >= p:
        raise ValueError(f"overparameterized formula needs sum(n_val) < p; got {total} >= {p}")
    if omega0_dist < 0:
        raise ValueError("omega0_dist must be >= 0")
    frac = total / p
    noise_terms = []
    for t in tasks:
        h = h_factor(t.lam, t.alpha, t.n_train, p)
        a2 = (t.lam**2 * t.alpha) ** 2
        noise_terms.append(t.sigma**2 * t.n_val / (t.lam**2 * h) * (1 + a2 * p / t.n_train))
    noise_r, lh_r = _test_terms(test, p)
    return (
        noise_r
        + lh_r / 2 * (1 - frac) * omega0_dist
        + lh_r * env.nu**2 / 2 * (1 + frac)
        + lh_r / (2 * p) * math.fsum(noise_terms)
    )


@dataclass(frozen=True)
class HomogeneousLossParams:
    sigma_prime: float
    alpha_prime: float
    nu: float
    p: int
    n: float
    b: float
    test: TestConfig = TestConfig()

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("n must be > 0")
        if not self.b >= 2 * self.n:
            raise ValueError("budget must satisfy b >= 2n")


def homogeneous_g(alpha_prime: float, ratio: float) -> tuple[float, float, float, float]:
    """``g1..g4`` of the large-``p`` form as functions of ``r = p/n``."""
    a, r = alpha_prime, ratio
    g1 = (1 - a) ** 2 - 2 * a * r + a**2 * (3 * r + r**2)
    g2 = (1 - a) ** 2 + a**2 * r
    g3 = (1 - a) ** 4 + 6 * a**2 * r - a**3 * (12 * r + 4 * r**2) + a**4 * (6 * r + 6 * r**2 + r**3)
    g4 = (1 - a) ** 4 + 2 * a**2 * r - 4 * a**3 * r + a**4 * (2 * r + r**2)
    return g1, g2, g3, g4


def homogeneous_constants(test: TestConfig, nu: float, p: int) -> tuple[float, float]:
    lr2 = test.lambda_r**2
    c2 = lr2 * (1 - lr2 * test.alpha_r) ** 2 + lr2**3 * test.alpha_r**2 * p / test.n_r
    c1 = test.sigma_r**2 / 2 * (1 + lr2**2 * test.alpha_r**2 * p / test.n_r) + nu**2 / 2 * c2
    return c1, c2


def homogeneous_shape(alpha_prime: float, sigma_prime: float, nu: float, x: float) -> float:
    """The ``n``-dependent bracket of the homogeneous loss, ``x = n/p``."""
    a = alpha_prime
    g1, g2, g3, g4 = homogeneous_g(a, 1.0 / x)
    return (
        sigma_prime**2 * (g2 + a**2 * (g1 + g2 / x)) + nu**2 * (x * g3 + g4)
    ) / g2**2


def theory_test_loss_homogeneous(params: HomogeneousLossParams) -> float:
    c1, c2 = homogeneous_constants(params.test, params.nu, params.p)
    shape = homogeneous_shape(
        params.alpha_prime, params.sigma_prime, params.nu, params.n / params.p
    )
    return c1 + c2 * params.p / params.b * shape
