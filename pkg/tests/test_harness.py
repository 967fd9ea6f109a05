import numpy as np
import pytest

from metaalloc.harness import (
    SweepConfig,
    SweepTable,
    bootstrap_optimum,
    easy_hard_study,
    run_cell,
    sweep_budget_grid,
)
from metaalloc.maml_solver import TestConfig
from metaalloc.rng_models import TaskEnvironment, TaskSpec


def small_config(**kw):
    base = dict(
        budgets=(64, 128), n_grid=(2, 4, 8), repetitions=3,
        env=TaskEnvironment.constant(8, 0.05, 0.2),
        train_spec=TaskSpec(sigma=0.2, lam=1.0, alpha=0.3),
        test=TestConfig(num_test_tasks=20),
    )
    base.update(kw)
    return SweepConfig(**base)


class TestCell:
    def test_noiseless_identical_tasks(self):
        cfg = small_config(
            env=TaskEnvironment.constant(8, 0.05, 0.0),
            train_spec=TaskSpec(sigma=0.0, lam=1.0, alpha=0.3),
            test=TestConfig(sigma_r=0.0, num_test_tasks=5),
        )
        assert run_cell(64, 4, 0, cfg).test_loss == pytest.approx(0.0, abs=1e-20)

    def test_deterministic(self):
        cfg = small_config()
        assert run_cell(128, 4, 2, cfg) == run_cell(128, 4, 2, cfg)

    def test_budget_conservation(self):
        r = run_cell(128, 8, 0, small_config())
        assert 2 * r.n_per_task * r.m_tasks == r.budget

    def test_infeasible_cell(self):
        with pytest.raises(ValueError):
            run_cell(100, 8, 0, small_config())


class TestSweep:
    def test_cardinality_and_order(self):
        cfg = small_config()
        table = sweep_budget_grid(cfg, workers=1)
        assert len(table.rows) == 2 * 3 * 3 and not table.skipped and not table.failures
        keys = [(r.budget, r.n_per_task, r.rep_id) for r in table.rows]
        assert keys == sorted(keys)

    def test_skipped_cells(self):
        cfg = small_config(budgets=(48,), n_grid=(2, 5, 24))
        table = sweep_budget_grid(cfg, workers=1)
        assert table.skipped == [(48, 5)]
        assert {r.n_per_task for r in table.rows} == {2, 24}

    def test_no_feasible_cell(self):
        with pytest.raises(ValueError):
            sweep_budget_grid(small_config(budgets=(10,), n_grid=(4,)), workers=1)

    def test_parallel_matches_serial(self):
        cfg = small_config(budgets=(64,), repetitions=2)
        assert sweep_budget_grid(cfg, 1).rows == sweep_budget_grid(cfg, 2).rows

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(budgets=(63,))
        with pytest.raises(ValueError):
            small_config(repetitions=0)


class TestBootstrap:
    def test_degenerate_curve(self):
        est = bootstrap_optimum({2: [5.0, 5.0], 4: [1.0, 1.0], 8: [3.0]}, 200)
        assert est.mean_N_star == 8 and est.std_N_star == 0

    def test_quadratic_argmin(self):
        ns = [2, 4, 6, 8, 10, 12, 14]
        curves = {n: np.full(4, (n - 10) ** 2 + 1.0) for n in ns}
        est = bootstrap_optimum(curves, 100, seed=3)
        assert est.mean_n_star == 10 and est.std_N_star == 0

    def test_ties_go_to_smaller_n(self):
        assert bootstrap_optimum({4: [1.0], 2: [1.0]}, 10).mean_N_star == 4

    def test_spread_reflects_noise(self):
        rng = np.random.default_rng(0)
        curves = {n: 1.0 + 0.5 * rng.standard_normal(50) for n in (2, 4, 8)}
        est = bootstrap_optimum(curves, 500, seed=1)
        assert est.std_N_star > 0 and est.N_star_samples.size == 500

    def test_reproducible(self):
        rng = np.random.default_rng(2)
        curves = {n: rng.random(10) for n in (2, 4, 8)}
        a = bootstrap_optimum(curves, 100, seed=7).N_star_samples
        b = bootstrap_optimum(curves, 100, seed=7).N_star_samples
        np.testing.assert_array_equal(a, b)

    def test_table_requires_budget(self):
        with pytest.raises(ValueError):
            bootstrap_optimum(SweepTable([], []), 10)

    def test_empty_curve(self):
        with pytest.raises(ValueError):
            bootstrap_optimum({2: []}, 10)


class TestEasyHard:
    def test_small_study(self):
        cfg = small_config(budgets=(64,), repetitions=2)
        res = easy_hard_study(TaskSpec(sigma=0.2), TaskSpec(sigma=1.0), cfg, n_samples=50,
                              workers=1)
        (row,) = res.rows()
        assert row["budget"] == 64
        assert all(n > 0 for n in res.theory_n_star)
        assert row["easy_theory_N_star"] == 2 * res.theory_n_star[0]

    def test_mismatched_specs(self):
        with pytest.raises(ValueError):
            easy_hard_study(TaskSpec(alpha=0.3), TaskSpec(alpha=0.1), small_config())
