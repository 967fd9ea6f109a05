"""Budget-constrained simulation sweeps and the bootstrap estimate of the optimum.

A cell is one (budget ``b``, per-split count ``n``, repetition) triple: it
meta-trains on ``m = b / 2n`` freshly sampled tasks with ``n`` training and
``n`` validation points each, solves for the meta-parameters in closed form
and scores them on freshly drawn test tasks.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .allocator import optimal_n_exact
from .maml_solver import (
    TestConfig,
    assemble_meta_system,
    empirical_test_loss,
    solve_meta_params,
)
from .rng_models import TaskEnvironment, TaskSpec, make_rng, sample_task_batch
from .theory_loss import theory_test_loss_under

log = logging.getLogger(__name__)

WORKERS_ENV = "METAALLOC_WORKERS"
DEFAULT_BUDGETS = (2**10, 2**11, 2**12, 2**13)
DEFAULT_N_GRID = (2, 4, 8, 16, 32, 64, 128)

# stream-key tags separating the training and test phases of a cell
_PHASE_TRAIN = 0
_PHASE_TEST = 1


@dataclass(frozen=True)
class SweepConfig:
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    repetitions: int = 100
    env: TaskEnvironment = field(default_factory=lambda: TaskEnvironment.constant(128))
    train_spec: TaskSpec = TaskSpec(sigma=0.2, lam=1.0, alpha=0.3)
    test: TestConfig = TestConfig()
    master_seed: int = 0
    # Reuse the same test tasks for every n within a (budget, repetition) so
    # that differences between n are not swamped by test-set noise.
    common_test_tasks: bool = True

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.repetitions < 1:
            raise ValueError("SweepConfig.repetitions must be >= 1")
        if any(b < 2 or b % 2 for b in self.budgets):
            raise ValueError("SweepConfig.budgets must be positive even integers")
        if any(n < 1 for n in self.n_grid):
            raise ValueError("SweepConfig.n_grid must be positive integers")

    def cells(self) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        """Feasible and skipped (budget, n) pairs."""
        ok, skipped = [], []
        for b in self.budgets:
            for n in self.n_grid:
                (ok if b % (2 * n) == 0 else skipped).append((b, n))
        return ok, skipped


@dataclass(frozen=True)
class CellResult:
    budget: int
    n_per_task: int
    m_tasks: int
    rep_id: int
    test_loss: float
    seed: str


class CellError(RuntimeError):
    def __init__(self, budget: int, n: int, rep_id: int, cause: Exception):
        super().__init__(f"cell (b={budget}, n={n}, rep={rep_id}) failed: {cause}")
        self.budget, self.n, self.rep_id = budget, n, rep_id


def run_cell(budget: int, n: int, rep_id: int, config: SweepConfig) -> CellResult:
    """Simulate one repetition of one (budget, n) cell."""
    if budget % (2 * n):
        raise ValueError(f"budget {budget} is not a multiple of 2n = {2 * n}")
    m = budget // (2 * n)
    spec = replace(config.train_spec, n_train=n, n_val=n)
    seed = config.master_seed
    train_keys = (_PHASE_TRAIN, budget, n, rep_id)
    test_keys = (_PHASE_TEST, budget, rep_id) if config.common_test_tasks else (
        _PHASE_TEST, budget, n, rep_id)
    try:
        data = sample_task_batch(config.env, spec, m, seed, *train_keys)
        omega = solve_meta_params(assemble_meta_system([(spec, d) for d in data]))
        loss = empirical_test_loss(omega, config.test, config.env, seed, *test_keys)
    except Exception as exc:
        raise CellError(budget, n, rep_id, exc) from exc
    return CellResult(budget, n, m, rep_id, loss, f"{seed}:{budget}:{n}:{rep_id}")


@dataclass
class SweepTable:
    rows: list[CellResult]
    skipped: list[tuple[int, int]]
    failures: list[str] = field(default_factory=list)

    def losses(self, budget: int) -> dict[int, np.ndarray]:
        """Per-n arrays of test losses ordered by repetition id."""
        out: dict[int, list[tuple[int, float]]] = {}
        for r in self.rows:
            if r.budget == budget:
                out.setdefault(r.n_per_task, []).append((r.rep_id, r.test_loss))
        return {n: np.array([v for _, v in sorted(vals)]) for n, vals in sorted(out.items())}

    def mean_curve(self, budget: int) -> dict[int, tuple[float, float]]:
        """n -> (mean loss, standard error) at ``budget``."""
        res = {}
        for n, v in self.losses(budget).items():
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            res[n] = (float(v.mean()), se)
        return res


def _run_job(args):
    budget, n, rep, config = args
    try:
        return run_cell(budget, n, rep, config)
    except CellError as exc:
        return str(exc)


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def sweep_budget_grid(config: SweepConfig, workers: int | None = None) -> SweepTable:
    """Run every feasible (budget, n, repetition) cell.

    Cells with ``b / 2n`` not an integer are skipped; failing cells are
    recorded and the sweep continues. Row order is deterministic regardless
    of ``workers``.
    """
    feasible, skipped = config.cells()
    for b, n in skipped:
        log.info("skipping infeasible cell b=%d n=%d", b, n)
    if not feasible:
        raise ValueError(f"no feasible (budget, n) cell; skipped {skipped}")
    jobs = [(b, n, r, config) for b, n in feasible for r in range(config.repetitions)]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=4))
    else:
        results = [_run_job(j) for j in jobs]
    rows = [r for r in results if isinstance(r, CellResult)]
    failures = [r for r in results if isinstance(r, str)]
    for f in failures:
        log.warning(f)
    return SweepTable(rows, skipped, failures)


@dataclass(frozen=True)
class OptimumEstimate:
    mean_N_star: float
    std_N_star: float
    bootstrap_samples: int
    budget: int
    N_star_samples: np.ndarray = field(repr=False, compare=False)

    @property
    def mean_n_star(self) -> float:
        return self.mean_N_star / 2


def bootstrap_optimum(
    table: SweepTable | dict[int, np.ndarray],
    n_samples: int = 1000,
    seed: int = 0,
    budget: int | None = None,
) -> OptimumEstimate:
    """Bootstrap distribution of the optimal points per task ``N* = 2 n*``.

    Each sample builds one loss curve by picking, for every ``n``, one
    repetition uniformly at random, and records the curve's argmin (ties to
    the smaller ``n``). ``table`` is a sweep table (``budget`` required) or a
    mapping ``n -> array of per-repetition losses``.
    """
    if isinstance(table, SweepTable):
        if budget is None:
            raise ValueError("budget is required when passing a SweepTable")
        curves = table.losses(budget)
    else:
        curves = {int(n): np.asarray(v, dtype=float) for n, v in sorted(table.items())}
    if not curves or any(v.size == 0 for v in curves.values()):
        raise ValueError("every grid point needs at least one repetition")
    ns = np.array(sorted(curves))
    rng = make_rng(seed, 0 if budget is None else budget)
    picks = np.column_stack([
        curves[n][rng.integers(0, curves[n].size, size=n_samples)] for n in ns
    ])
    n_star = ns[np.argmin(picks, axis=1)]  # argmin returns the first, i.e. smaller n
    N_star = 2.0 * n_star
    return OptimumEstimate(
        float(N_star.mean()), float(N_star.std()), n_samples, budget or 0, N_star
    )


@dataclass
class EasyHardResult:
    easy: SweepTable
    hard: SweepTable
    estimates: dict[int, tuple[OptimumEstimate, OptimumEstimate]]
    theory_n_star: tuple[float, float]
    theory_grid_n_star: dict[int, tuple[int, int]]

    def rows(self) -> list[dict]:
        out = []
        for b, (e, h) in sorted(self.estimates.items()):
            ge, gh = self.theory_grid_n_star[b]
            out.append({
                "budget": b,
                "easy_mean_N_star": e.mean_N_star, "easy_std_N_star": e.std_N_star,
                "hard_mean_N_star": h.mean_N_star, "hard_std_N_star": h.std_N_star,
                "easy_theory_N_star": 2 * self.theory_n_star[0],
                "hard_theory_N_star": 2 * self.theory_n_star[1],
                "easy_theory_grid_N_star": 2 * ge, "hard_theory_grid_N_star": 2 * gh,
            })
        return out


def _theory_grid_argmin(spec: TaskSpec, config: SweepConfig, budget: int) -> int:
    best = None
    for n in config.n_grid:
        if budget % (2 * n):
            continue
        m = budget // (2 * n)
        if m * n < config.env.p:
            continue
        val = theory_test_loss_under(
            [replace(spec, n_train=n, n_val=n)] * m, config.env, config.test
        )
        if best is None or val < best[0]:
            best = (val, n)
    return best[1] if best else 0


def easy_hard_study(
    easy: TaskSpec,
    hard: TaskSpec,
    config: SweepConfig,
    n_samples: int = 1000,
    workers: int | None = None,
) -> EasyHardResult:
    """Separate sweeps for easy and hard tasks, each tested on its own kind.

    Reports bootstrap optima side by side with the large-``p`` cubic optimum
    and the grid argmin of the finite-``p`` theory loss.
    """
    if (easy.alpha, easy.n_train, easy.n_val) != (hard.alpha, hard.n_train, hard.n_val):
        raise ValueError("easy and hard specs may differ only in (sigma, lam)")
    tables, theory, grid = [], [], {}
    for k, spec in enumerate((easy, hard)):
        cfg = replace(
            config,
            train_spec=spec,
            test=replace(config.test, sigma_r=spec.sigma, lambda_r=spec.lam),
            master_seed=config.master_seed + k,
        )
        tables.append(sweep_budget_grid(cfg, workers))
        theory.append(optimal_n_exact(spec.lam**2 * spec.alpha, spec.sigma / spec.lam,
                                      cfg.env.nu, cfg.env.p).n_star)
        for b in config.budgets:
            grid.setdefault(b, []).append(_theory_grid_argmin(spec, cfg, b))
    estimates = {
        b: tuple(bootstrap_optimum(t, n_samples, config.master_seed, b) for t in tables)
        for b in config.budgets
    }
    return EasyHardResult(tables[0], tables[1], estimates, tuple(theory),
                          {b: tuple(v) for b, v in grid.items()})
