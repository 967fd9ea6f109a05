"""Exact one-step MAML for mixed linear regression.

With a single full-batch inner step the meta-training loss is quadratic in the
meta-parameters, ``L(w) = |gamma - B w|^2 / (2m)``, so the outer problem is a
least-squares problem solved here in closed form.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng_models import (
    ROLE_EVAL,
    ROLE_TARGET,
    TaskDataset,
    TaskEnvironment,
    TaskSpec,
    make_rng,
)

CONDITION_GUARD = 1e12

Task = tuple[TaskSpec, TaskDataset]


class Regime(enum.Enum):
    UNDERPARAMETERIZED = "underparameterized"
    OVERPARAMETERIZED = "overparameterized"


class IllConditionedError(np.linalg.LinAlgError):
    def __init__(self, condition: float, regime: Regime):
        super().__init__(
            f"{regime.value} Gram matrix has condition number {condition:.3e} "
            f"(guard {CONDITION_GUARD:.0e})"
        )
        self.condition = condition
        self.regime = regime


@dataclass(frozen=True)
class MetaSystem:
    B: np.ndarray
    gamma: np.ndarray
    regime: Regime
    m: int

    @property
    def n_rows(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class TestConfig:
    """Meta-test protocol: adapt on ``n_r`` points, evaluate on ``n_s``."""

    __test__ = False  # not a pytest class

    sigma_r: float = 0.2
    lambda_r: float = 1.0
    alpha_r: float = 0.3
    n_r: int = 20
    n_s: int = 50
    num_test_tasks: int = 100

    def __post_init__(self):
        if not self.sigma_r >= 0:
            raise ValueError(f"TestConfig.sigma_r must be >= 0, got {self.sigma_r}")
        if not self.lambda_r > 0:
            raise ValueError(f"TestConfig.lambda_r must be > 0, got {self.lambda_r}")
        for name in ("n_r", "n_s", "num_test_tasks"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"TestConfig.{name} must be a positive integer, got {v}")


@dataclass(frozen=True)
class IterativeSolverConfig:
    meta_learning_rate: float | None = None  # None: 1 / largest Hessian eigenvalue
    max_iterations: int = 200_000
    tolerance: float = 1e-13

    def __post_init__(self):
        if self.meta_learning_rate is not None and not self.meta_learning_rate > 0:
            raise ValueError("meta_learning_rate must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


def adapt_one_step(omega: np.ndarray, X: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """One full-batch gradient step on ``|y - X theta|^2 / 2n`` starting at ``omega``."""
    n = X.shape[0]
    return omega + (alpha / n) * (X.T @ (y - X @ omega))


def meta_train_loss(omega: np.ndarray, tasks: Sequence[Task]) -> float:
    if not tasks:
        raise ValueError("at least one task is required")
    total = 0.0
    for spec, data in tasks:
        theta = adapt_one_step(omega, data.X_train, data.y_train, spec.alpha)
        r = data.y_val - data.X_val @ theta
        total += (r @ r) / (2 * data.X_val.shape[0])
    return total / len(tasks)


def assemble_meta_system(tasks: Sequence[Task]) -> MetaSystem:
    """Stack per-task blocks so that ``meta_train_loss(w) == |gamma - B w|^2 / 2m``."""
    if not tasks:
        raise ValueError("at least one task is required")
    B_blocks, g_blocks = [], []
    for spec, d in tasks:
        n_t, n_v = d.X_train.shape[0], d.X_val.shape[0]
        scale = 1.0 / math.sqrt(n_v)
        XvXtT = d.X_val @ d.X_train.T
        # X_v (I - a/n_t Xt^T Xt) without forming the p x p matrix
        B_blocks.append(scale * (d.X_val - (spec.alpha / n_t) * (XvXtT @ d.X_train)))
        g_blocks.append(scale * (d.y_val - (spec.alpha / n_t) * (XvXtT @ d.y_train)))
    B = np.vstack(B_blocks)
    gamma = np.concatenate(g_blocks)
    p = B.shape[1]
    regime = Regime.UNDERPARAMETERIZED if B.shape[0] > p else Regime.OVERPARAMETERIZED
    return MetaSystem(B, gamma, regime, len(tasks))


def solve_meta_params(system: MetaSystem, omega0: np.ndarray | None = None) -> np.ndarray:
    """Closed-form minimiser of the meta-training loss.

    Underparameterized: ``(B^T B)^-1 B^T gamma``. Overparameterized: the
    interpolating solution closest to ``omega0`` (zero by default),
    ``B^T (B B^T)^-1 gamma + (I - B^T (B B^T)^-1 B) omega0``.
    """
    B, gamma = system.B, system.gamma
    p = B.shape[1]
    if omega0 is None:
        omega0 = np.zeros(p)
    # Singular values of B give the Gram condition number as their squared ratio.
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    cond = math.inf if s[-1] == 0 else float((s[0] / s[-1]) ** 2)
    if not cond <= CONDITION_GUARD:
        raise IllConditionedError(cond, system.regime)
    if system.regime is Regime.UNDERPARAMETERIZED:
        return Vt.T @ ((U.T @ gamma) / s)
    # min-norm correction applied to the residual of omega0
    resid = gamma - B @ omega0
    return omega0 + Vt.T @ ((U.T @ resid) / s)


def solve_meta_params_iterative(
    tasks: Sequence[Task],
    config: IterativeSolverConfig = IterativeSolverConfig(),
    omega0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Plain gradient descent on the meta-training loss, used as a cross-check.

    The gradient is computed task by task through the inner adaptation step
    (chain rule through ``theta(omega)``), not from the stacked system.
    Returns the final iterate and the number of iterations taken.
    """
    p = tasks[0][1].X_train.shape[1]
    omega = np.zeros(p) if omega0 is None else np.array(omega0, dtype=float)
    m = len(tasks)

    # Per task: theta = P_i omega + c_i; grad = (1/m) sum P_i^T Xv^T (Xv theta - yv) / n_v
    mats, vecs = [], []
    for spec, d in tasks:
        n_t, n_v = d.X_train.shape[0], d.X_val.shape[0]
        P = np.eye(p) - (spec.alpha / n_t) * (d.X_train.T @ d.X_train)
        c = (spec.alpha / n_t) * (d.X_train.T @ d.y_train)
        mats.append((P, d.X_val / math.sqrt(n_v), c, d.y_val / math.sqrt(n_v)))

    def grad(w):
        g = np.zeros(p)
        for P, Xv, c, yv in mats:
            g += P.T @ (Xv.T @ (Xv @ (P @ w + c) - yv))
        return g / m

    lr = config.meta_learning_rate
    if lr is None:
        H = sum(P.T @ Xv.T @ Xv @ P for P, Xv, _, _ in mats) / m
        lr = 1.0 / np.linalg.eigvalsh(H)[-1]
    for it in range(1, config.max_iterations + 1):
        step = lr * grad(omega)
        omega = omega - step
        if np.linalg.norm(step) <= config.tolerance * max(1.0, np.linalg.norm(omega)):
            return omega, it
    return omega, config.max_iterations


def empirical_test_loss(
    omega_star: np.ndarray, test: TestConfig, env: TaskEnvironment, seed: int, *keys: int
) -> float:
    """Average meta-test loss of ``omega_star`` over freshly drawn test tasks.

    Each test task adapts ``omega_star`` by one step of rate ``alpha_r`` on
    ``n_r`` target points and is scored by half the mean squared error on
    ``n_s`` independent points.
    """
    p = env.p
    T = test.num_test_tasks
    rng_t = make_rng(seed, *keys, ROLE_TARGET)
    rng_s = make_rng(seed, *keys, ROLE_EVAL)
    W = env.theta0 + (env.nu / math.sqrt(p)) * rng_t.standard_normal((T, p))
    Xr = test.lambda_r * rng_t.standard_normal((T, test.n_r, p))
    yr = np.einsum("tnp,tp->tn", Xr, W) + test.sigma_r * rng_t.standard_normal((T, test.n_r))
    Xs = test.lambda_r * rng_s.standard_normal((T, test.n_s, p))
    ys = np.einsum("tnp,tp->tn", Xs, W) + test.sigma_r * rng_s.standard_normal((T, test.n_s))

    resid_r = yr - Xr @ omega_star
    theta = omega_star + (test.alpha_r / test.n_r) * np.einsum("tnp,tn->tp", Xr, resid_r)
    resid_s = ys - np.einsum("tnp,tp->tn", Xs, theta)
    per_task = np.einsum("tn,tn->t", resid_s, resid_s) / (2 * test.n_s)
    return float(per_task.mean())
