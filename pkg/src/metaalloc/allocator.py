"""Optimal allocation of a labelled-data budget across meta-training tasks.

For homogeneous tasks with a uniform allocation, the stationarity condition of
the large-``p`` test loss is a cubic in ``x = n/p``; its real positive root
gives the budget-independent optimum ``n* = x p``. Non-uniform allocations are
searched over integer vectors with ``sum(n_i) = b/2``.
"""

from __future__ import annotations

import cmath
import itertools
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .maml_solver import TestConfig
from .rng_models import TaskEnvironment, TaskSpec
from .theory_loss import homogeneous_shape, theory_test_loss_under

EXHAUSTIVE_MAX_TASKS = 4
EXHAUSTIVE_MAX_BUDGET = 64
_IMAG_TOL = 1e-9


@dataclass(frozen=True)
class CubicCoefficients:
    A: float
    B: float
    C: float
    D: float
    delta0: float
    delta1: float
    discriminant: float

    def __call__(self, x):
        return ((self.A * x + self.B) * x + self.C) * x + self.D

    def monomials(self, x) -> tuple:
        return (self.A * x**3, self.B * x**2, self.C * x, self.D)


class NoPositiveRootError(ArithmeticError):
    def __init__(self, roots):
        super().__init__(f"cubic has no real positive root; roots: {roots}")
        self.roots = roots


def cubic_coefficients(alpha_prime: float, sigma_prime: float, nu: float) -> CubicCoefficients:
    """Coefficients of the stationarity cubic ``A x^3 + B x^2 + C x + D`` in ``x = n/p``."""
    if not nu > 0:
        raise ValueError("nu must be > 0: the cubic degenerates at nu = 0")
    a, s2, v2 = alpha_prime, sigma_prime**2, nu**2
    A = v2 * (1 - a) ** 6
    B = 3 * v2 * a**2 * (1 - a) ** 4
    C = 2 * a**3 * (v2 * (2 - a - 4 * a**2 + 3 * a**3) + s2 * (2 - 5 * a + 4 * a**2 - a**3))
    D = 2 * a**4 * (v2 * (2 * a**2 - 1) + s2 * (2 * a - 1))
    d0 = B**2 - 3 * A * C
    d1 = 2 * B**3 - 9 * A * B * C + 27 * A**2 * D
    disc = -27 * A**2 * D**2 + 18 * A * B * C * D - 4 * A * C**3 - 4 * B**3 * D + B**2 * C**2
    return CubicCoefficients(A, B, C, D, d0, d1, disc)


def cardano_roots(c: CubicCoefficients) -> list[complex]:
    """The three roots ``k = 0, 1, 2`` of the cubic by Cardano's formula."""
    if c.A == 0:
        raise ValueError("leading coefficient vanishes (alpha_prime == 1?)")
    sq = cmath.sqrt(c.delta1**2 - 4 * c.delta0**3)
    # take the sign that keeps the cube-root argument away from zero
    big = c.delta1 + sq if abs(c.delta1 + sq) >= abs(c.delta1 - sq) else c.delta1 - sq
    base = (big / 2) ** (1 / 3) if big != 0 else 0j
    xi = complex(-0.5, math.sqrt(3) / 2)
    roots = []
    for k in range(3):
        ck = base * xi**k
        tail = c.delta0 / ck if ck != 0 else 0j
        roots.append(-(c.B + ck + tail) / (3 * c.A))
    return roots


@dataclass(frozen=True)
class AllocationSolution:
    n_star: float
    N_star: float
    root_multiset: tuple[complex, complex, complex]
    coefficients: CubicCoefficients
    selection_note: str


def optimal_n_exact(alpha_prime: float, sigma_prime: float, nu: float, p: int) -> AllocationSolution:
    """Budget-independent optimal per-split data count ``n*`` for homogeneous tasks."""
    if alpha_prime == 1:
        raise ValueError("alpha_prime == 1 makes A = B = 0; the cubic degenerates")
    coeffs = cubic_coefficients(alpha_prime, sigma_prime, nu)
    xs = cardano_roots(coeffs)
    roots = tuple(p * x for x in xs)
    cands = [x.real for x in xs if abs(x.imag) <= _IMAG_TOL * abs(x.real) and x.real > 0]
    if not cands:
        raise NoPositiveRootError(roots)
    if len(cands) == 1:
        x = cands[0]
        note = "unique real positive root"
    else:
        x = min(cands, key=lambda r: homogeneous_shape(alpha_prime, sigma_prime, nu, r))
        note = f"{len(cands)} real positive roots; kept the loss minimiser"
    return AllocationSolution(p * x, 2 * p * x, roots, coeffs, note)


def optimal_N_approx(alpha_prime: float, sigma_prime: float, nu: float, p: int) -> float:
    """Small-``alpha_prime`` approximation of the optimal total points per task."""
    if not nu > 0:
        raise ValueError("nu must be > 0")
    return 2 * (2 * (1 + sigma_prime**2 / nu**2)) ** (1 / 3) * abs(alpha_prime) ** (4 / 3) * p


@dataclass(frozen=True)
class GridOptimum:
    n_star: int
    loss: float
    losses: dict[int, float]
    skipped: tuple[int, ...]


def optimal_n_grid(
    loss: Callable[[int], float], budget: int, n_grid: Sequence[int]
) -> GridOptimum:
    """Grid argmin of ``loss(n)`` over per-split counts that divide the budget.

    Values of ``n`` for which ``b / 2n`` is not an integer are skipped. Ties go
    to the smaller ``n``.
    """
    feasible = sorted(n for n in set(n_grid) if n >= 1 and budget % (2 * n) == 0)
    skipped = tuple(sorted(n for n in set(n_grid) if n not in feasible))
    if not feasible:
        raise ValueError(f"no n in {sorted(set(n_grid))} divides budget {budget} / 2")
    losses = {n: float(loss(n)) for n in feasible}
    best = min(feasible, key=lambda n: (losses[n], n))
    return GridOptimum(best, losses[best], losses, skipped)


def round_to_grid(n_star: float, loss: Callable[[int], float], budget: int) -> int:
    """Nearest feasible divisor points below and above ``n_star``; keep the better one."""
    divisors = [n for n in range(1, budget // 2 + 1) if budget % (2 * n) == 0]
    below = [n for n in divisors if n <= n_star]
    above = [n for n in divisors if n >= n_star]
    cands = {c for c in (below[-1] if below else None, above[0] if above else None) if c}
    return min(cands, key=lambda n: (loss(n), n))


@dataclass(frozen=True)
class AllocationProblem:
    budget: int
    specs: tuple[TaskSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if self.budget % 2 or self.budget < 2 * len(self.specs):
            raise ValueError(
                f"infeasible: budget {self.budget} must be even and >= 2 * {len(self.specs)} tasks"
            )

    @property
    def m(self) -> int:
        return len(self.specs)

    @property
    def total(self) -> int:
        return self.budget // 2


def allocate(specs: Sequence[TaskSpec], allocation: Sequence[int]) -> list[TaskSpec]:
    """Copies of ``specs`` with equal train/validation splits set from ``allocation``."""
    return [replace(s, n_train=int(n), n_val=int(n)) for s, n in zip(specs, allocation)]


def theory_allocation_loss(
    specs: Sequence[TaskSpec], env: TaskEnvironment, test: TestConfig
) -> Callable[[Sequence[int]], float]:
    return lambda alloc: theory_test_loss_under(allocate(specs, alloc), env, test)


def _compositions(total: int, parts: int):
    """All vectors of ``parts`` positive integers summing to ``total``."""
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def _coordinate_descent(total: int, m: int, loss) -> tuple[int, ...]:
    base, extra = divmod(total, m)
    cur = [base + (i < extra) for i in range(m)]
    best = loss(cur)
    improved = True
    while improved:
        improved = False
        for i, j in itertools.permutations(range(m), 2):
            if cur[i] <= 1:
                continue
            cand = list(cur)
            cand[i] -= 1
            cand[j] += 1
            val = loss(cand)
            if val < best:
                cur, best, improved = cand, val, True
    return tuple(cur)


def allocation_search_nonuniform(
    problem: AllocationProblem,
    loss: Callable[[Sequence[int]], float],
    method: str = "auto",
) -> tuple[int, ...]:
    """Integer allocation minimising ``loss`` subject to ``sum(n_i) = b/2``.

    ``method`` is ``"exhaustive"``, ``"descent"`` or ``"auto"`` (exhaustive
    when ``m <= 4`` and ``b <= 64``).
    """
    if method == "auto":
        small = problem.m <= EXHAUSTIVE_MAX_TASKS and problem.budget <= EXHAUSTIVE_MAX_BUDGET
        method = "exhaustive" if small else "descent"
    if method == "exhaustive":
        return min(_compositions(problem.total, problem.m), key=lambda a: (loss(a), a))
    if method == "descent":
        return _coordinate_descent(problem.total, problem.m, loss)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SymmetryReport:
    applicable: bool
    reason: str = ""
    permutations_checked: int = 0
    permutation_mismatches: int = 0
    pairs_checked: int = 0
    pair_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (
            self.applicable
            and self.permutation_mismatches == 0
            and not self.pair_violations
        )


def symmetry_certificate(
    tasks: Sequence[TaskSpec],
    allocation: Sequence[int],
    trials: int,
    env: TaskEnvironment,
    test: TestConfig,
    seed: int = 0,
) -> tuple[bool, SymmetryReport]:
    """Numerical check of the two premises behind the uniform-optimum argument.

    1. the loss is invariant (bit for bit) under random permutations of the
       allocation;
    2. replacing a random pair ``(n_i, n_j)`` by its average (split as
       ``floor``/``ceil`` when the sum is odd) never increases the loss.
    """
    first = tasks[0]
    key = (first.sigma, first.lam, first.alpha)
    if any((t.sigma, t.lam, t.alpha) != key for t in tasks):
        return False, SymmetryReport(False, "tasks are not homogeneous in (sigma, lam, alpha)")
    if len(allocation) != len(tasks):
        raise ValueError("allocation length must equal the number of tasks")
    loss = theory_allocation_loss(tasks, env, test)
    rnd = random.Random(seed)
    alloc = list(allocation)
    ref = loss(alloc)
    report = SymmetryReport(True)
    for _ in range(trials):
        perm = alloc[:]
        rnd.shuffle(perm)
        report.permutations_checked += 1
        if loss(perm) != ref:
            report.permutation_mismatches += 1
        if len(alloc) >= 2:
            i, j = rnd.sample(range(len(alloc)), 2)
            s = alloc[i] + alloc[j]
            avg = alloc[:]
            avg[i], avg[j] = s // 2, s - s // 2
            la = loss(avg)
            report.pairs_checked += 1
            if la > ref + 1e-12 * abs(ref):
                report.pair_violations.append((tuple(alloc), (i, j), la - ref))
    return report.passed, report


def exact_vs_grid_gap(alpha_prime: float, sigma_prime: float, nu: float, p: int) -> float:
    """``|n*_exact - argmin_n|`` with the homogeneous loss scanned over ``n = 1..p``."""
    sol = optimal_n_exact(alpha_prime, sigma_prime, nu, p)
    ns = np.arange(1, p + 1)
    vals = [homogeneous_shape(alpha_prime, sigma_prime, nu, n / p) for n in ns]
    return abs(sol.n_star - int(ns[int(np.argmin(vals))]))
