"""Gaussian generative model for mixed linear regression and Wishart-type moments.

Random streams are derived with :class:`numpy.random.SeedSequence`: a run is
identified by an integer seed plus a tuple of non-negative integer keys (task
index, data role, repetition, ...). ``make_rng(seed, *keys)`` always returns
the same stream for the same arguments, and streams for different key tuples
are statistically independent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Integer tags for the data role component of a stream key.
ROLE_TASK = 0
ROLE_TRAIN = 1
ROLE_VAL = 2
ROLE_TARGET = 3
ROLE_EVAL = 4


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for the stream ``(seed, keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class TaskEnvironment:
    """Distribution of task parameters: ``w ~ N(theta0, nu^2/p I_p)``."""

    theta0: np.ndarray
    nu: float
    p: int = field(init=False)

    def __post_init__(self):
        theta0 = np.asarray(self.theta0, dtype=float).reshape(-1)
        if theta0.size < 1:
            raise ValueError("theta0 must have at least one component")
        if not self.nu >= 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "p", int(theta0.size))

    @classmethod
    def constant(cls, p: int, value: float = 0.05, nu: float = 0.2) -> "TaskEnvironment":
        if p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        return cls(np.full(p, float(value)), nu)


@dataclass(frozen=True)
class TaskSpec:
    """Per-task sampling and adaptation hyperparameters."""

    sigma: float = 0.2
    lam: float = 1.0
    alpha: float = 0.3
    n_train: int = 10
    n_val: int = 10

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"TaskSpec.sigma must be >= 0, got {self.sigma}")
        if not self.lam > 0:
            raise ValueError(f"TaskSpec.lam must be > 0, got {self.lam}")
        if int(self.n_train) != self.n_train or self.n_train < 1:
            raise ValueError(f"TaskSpec.n_train must be a positive integer, got {self.n_train}")
        if int(self.n_val) != self.n_val or self.n_val < 1:
            raise ValueError(f"TaskSpec.n_val must be a positive integer, got {self.n_val}")


@dataclass(frozen=True)
class TaskDataset:
    w_true: np.ndarray
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray


def sample_task_vector(env: TaskEnvironment, seed: int, *keys: int) -> np.ndarray:
    """Draw one task's generating parameter vector."""
    rng = make_rng(seed, *keys, ROLE_TASK)
    return env.theta0 + (env.nu / math.sqrt(env.p)) * rng.standard_normal(env.p)


def sample_inputs(rng: np.random.Generator, n: int, p: int, lam: float) -> np.ndarray:
    return lam * rng.standard_normal((n, p))


def sample_task_dataset(
    env: TaskEnvironment, spec: TaskSpec, seed: int, *keys: int
) -> TaskDataset:
    """Draw a task vector and independent train/validation sets for it."""
    w = sample_task_vector(env, seed, *keys)
    out = [w]
    for role, n in ((ROLE_TRAIN, spec.n_train), (ROLE_VAL, spec.n_val)):
        rng = make_rng(seed, *keys, role)
        X = sample_inputs(rng, n, env.p, spec.lam)
        y = X @ w
        if spec.sigma > 0:
            y = y + spec.sigma * rng.standard_normal(n)
        out += [X, y]
    return TaskDataset(*out)


def sample_task_batch(
    env: TaskEnvironment, spec: TaskSpec, m: int, seed: int, *keys: int
) -> list[TaskDataset]:
    """Draw ``m`` i.i.d. tasks from a single stream (faster than per-task streams)."""
    p = env.p
    rng = make_rng(seed, *keys, ROLE_TASK)
    W = env.theta0 + (env.nu / math.sqrt(p)) * rng.standard_normal((m, p))
    splits = []
    for role, n in ((ROLE_TRAIN, spec.n_train), (ROLE_VAL, spec.n_val)):
        r = make_rng(seed, *keys, role)
        X = spec.lam * r.standard_normal((m, n, p))
        y = np.einsum("mnp,mp->mn", X, W)
        if spec.sigma > 0:
            y = y + spec.sigma * r.standard_normal((m, n))
        splits.append((X, y))
    (Xt, yt), (Xv, yv) = splits
    return [TaskDataset(W[i], Xt[i], yt[i], Xv[i], yv[i]) for i in range(m)]


class MomentKind(enum.Enum):
    """Expectations of products of ``S = X^T X`` that are multiples of ``I_p``."""

    POWER1 = "S"
    POWER2 = "S^2"
    POWER3 = "S^3"
    POWER4 = "S^4"
    TRACE_1_1 = "S tr(S)"
    TRACE_2_1 = "S^2 tr(S)"
    TRACE_1_2 = "S tr(S^2)"
    TRACE_2_2 = "S^2 tr(S^2)"

    @property
    def order(self) -> int:
        """Number of ``X^T X`` factors; the moment scales as ``lam**(2*order)``."""
        return _ORDER[self]


_ORDER = {
    MomentKind.POWER1: 1,
    MomentKind.POWER2: 2,
    MomentKind.POWER3: 3,
    MomentKind.POWER4: 4,
    MomentKind.TRACE_1_1: 2,
    MomentKind.TRACE_2_1: 3,
    MomentKind.TRACE_1_2: 3,
    MomentKind.TRACE_2_2: 4,
}


def lemma1_moment(kind: MomentKind, n: int, p: int, lam: float = 1.0) -> float:
    """Closed-form coefficient ``c`` in ``E[f(X^T X)] = c I_p`` for Gaussian ``X``.

    ``X`` is ``n x p`` with i.i.d. ``N(0, lam^2)`` entries.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    if kind is MomentKind.POWER1:
        poly = n
    elif kind is MomentKind.POWER2:
        poly = n * (n + p + 1)
    elif kind is MomentKind.POWER3:
        poly = n * (n**2 + p**2 + 3 * n * p + 3 * n + 3 * p + 4)
    elif kind is MomentKind.POWER4:
        poly = n * (
            n**3 + p**3 + 6 * n**2 * p + 6 * n * p**2
            + 6 * n**2 + 6 * p**2 + 17 * n * p + 21 * n + 21 * p + 20
        )
    elif kind is MomentKind.TRACE_1_1:
        poly = n**2 * p + 2 * n
    elif kind in (MomentKind.TRACE_2_1, MomentKind.TRACE_1_2):
        poly = n * (n**2 * p + n * p**2 + n * p + 4 * n + 4 * p + 4)
    elif kind is MomentKind.TRACE_2_2:
        poly = n * (
            n**3 * p + n * p**3 + 2 * n**2 * p**2 + 2 * n**2 * p + 2 * n * p**2
            + 8 * n**2 + 8 * p**2 + 21 * n * p + 20 * n + 20 * p + 20
        )
    else:  # pragma: no cover
        raise ValueError(kind)
    return float(poly) * lam ** (2 * kind.order)


def _float_key(x: float) -> int:
    return int(np.float64(x).view(np.uint64))


class NonFiniteMomentError(FloatingPointError):
    """Monte Carlo accumulation produced a non-finite value."""


def _moment_samples(X: np.ndarray) -> dict[MomentKind, np.ndarray]:
    """Per-trial matrices for every kind, from a batch ``X`` of shape (T, n, p)."""
    S = np.einsum("tij,tik->tjk", X, X)
    S2 = S @ S
    trS = np.trace(S, axis1=1, axis2=2)[:, None, None]
    trS2 = np.einsum("tij,tji->t", S, S)[:, None, None]
    return {
        MomentKind.POWER1: S,
        MomentKind.POWER2: S2,
        MomentKind.POWER3: S2 @ S,
        MomentKind.POWER4: S2 @ S2,
        MomentKind.TRACE_1_1: S * trS,
        MomentKind.TRACE_2_1: S2 * trS,
        MomentKind.TRACE_1_2: S * trS2,
        MomentKind.TRACE_2_2: S2 * trS2,
    }


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    std_error: float
    offdiag_mean: float
    offdiag_std_error: float


def monte_carlo_moments(
    n: int, p: int, lam: float, trials: int, seed: int, batch: int = 20_000
) -> dict[MomentKind, MomentEstimate]:
    """Estimate all eight moments from one shared set of sampled matrices.

    Each trial's matrix is projected onto the identity by the mean of its
    diagonal; the standard error is that of the per-trial projections.
    Off-diagonal entries are averaged the same way (zero when ``p == 1``).
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    rng = make_rng(seed, n, p, _float_key(lam))
    kinds = list(MomentKind)
    diag_parts = {k: [] for k in kinds}
    off_parts = {k: [] for k in kinds}
    offmask = ~np.eye(p, dtype=bool)
    done = 0
    while done < trials:
        t = min(batch, trials - done)
        X = lam * rng.standard_normal((t, n, p))
        with np.errstate(over="ignore", invalid="ignore"):
            samples = _moment_samples(X)
        for k, M in samples.items():
            diag_parts[k].append(np.diagonal(M, axis1=1, axis2=2).mean(axis=1))
            if p > 1:
                off_parts[k].append(M[:, offmask].mean(axis=1))
        done += t

    out = {}
    for k in kinds:
        d = np.concatenate(diag_parts[k])
        if not np.all(np.isfinite(d)):
            raise NonFiniteMomentError(f"non-finite samples for {k.name} at n={n}, p={p}")
        if p > 1:
            o = np.concatenate(off_parts[k])
            off_mean, off_se = float(o.mean()), float(o.std(ddof=1) / math.sqrt(o.size))
        else:
            off_mean, off_se = 0.0, 0.0
        out[k] = MomentEstimate(
            float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)), off_mean, off_se
        )
    return out


def monte_carlo_moment(
    kind: MomentKind, n: int, p: int, lam: float, trials: int, seed: int
) -> tuple[float, float]:
    """(estimate, standard error) of the identity coefficient of one moment."""
    est = monte_carlo_moments(n, p, lam, trials, seed)[kind]
    return est.estimate, est.std_error


@dataclass(frozen=True)
class MuCoefficients:
    mu2: float
    mu3: float
    mu4: float
    mu11: float
    mu21: float
    mu22: float


def mu_coefficients(n_t: int, p: int) -> MuCoefficients:
    """Normalised moment coefficients used by the structure polynomials.

    Each ``mu`` is the corresponding Wishart moment divided by its leading
    term, so every ``mu -> 1`` as ``n_t -> inf`` at fixed ``p``.
    """
    n = float(n_t)
    p = float(p)
    if n < 1 or p < 1:
        raise ValueError("n_t and p must be >= 1")
    mu2 = (n + p + 1) / n
    mu3 = (n**2 + p**2 + 3 * n * p + 3 * n + 3 * p + 4) / n**2
    mu4 = (
        n**3 + p**3 + 6 * n**2 * p + 6 * n * p**2 + 6 * n**2 + 6 * p**2
        + 17 * n * p + 21 * n + 21 * p + 20
    ) / n**3
    mu11 = (n**2 * p + 2 * n) / (n**2 * p)
    mu21 = (n**2 * p + n * p**2 + n * p + 4 * n + 4 * p + 4) / (n**2 * p)
    mu22 = (
        n**3 * p + n * p**3 + 2 * n**2 * p**2 + 2 * n**2 * p + 2 * n * p**2
        + 8 * n**2 + 8 * p**2 + 21 * n * p + 20 * n + 20 * p + 20
    ) / (n**3 * p)
    return MuCoefficients(mu2, mu3, mu4, mu11, mu21, mu22)
