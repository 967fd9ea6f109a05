"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Missing keys take the defaults below (the standard linear-regression
protocol: sigma = nu = 0.2, p = 128, alpha = 0.3, theta0 entries 0.05,
100 test tasks with 20 adaptation and 50 evaluation points, 100
repetitions, 1000 bootstrap samples).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .harness import DEFAULT_BUDGETS, DEFAULT_N_GRID, SweepConfig
from .maml_solver import TestConfig
from .rng_models import TaskEnvironment, TaskSpec


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "env.p": (int, 128),
    "env.nu": (float, 0.2),
    "env.theta0": (float, 0.05),
    "train.sigma": (float, 0.2),
    "train.lambda": (float, 1.0),
    "train.alpha": (float, 0.3),
    "train.n_train": (int, 10),
    "train.n_val": (int, 10),
    "test.sigma_r": (float, 0.2),
    "test.lambda_r": (float, 1.0),
    "test.alpha_r": (float, 0.3),
    "test.n_r": (int, 20),
    "test.n_s": (int, 50),
    "test.num_test_tasks": (int, 100),
    "sweep.budgets": (_int_list, DEFAULT_BUDGETS),
    "sweep.n_grid": (_int_list, DEFAULT_N_GRID),
    "sweep.repetitions": (int, 100),
    "sweep.bootstrap_samples": (int, 1000),
    "sweep.master_seed": (int, 0),
    "sweep.common_test_tasks": (_bool, True),
    "easyhard.hard_sigma": (float, 1.0),
    "easyhard.hard_lambda": (float, 1.0),
    "moments.trials": (int, 100_000),
    "moments.n_max": (int, 6),
    "moments.p_max": (int, 6),
    "moments.lambdas": (_float_list, (0.5, 1.0, 2.0)),
}

# error-message names of the typed fields each key feeds
_FIELD = {
    "train.sigma": "TaskSpec.sigma", "train.lambda": "TaskSpec.lambda",
    "train.alpha": "TaskSpec.alpha", "train.n_train": "TaskSpec.n_train",
    "train.n_val": "TaskSpec.n_val", "env.p": "TaskEnvironment.p",
    "env.nu": "TaskEnvironment.nu", "env.theta0": "TaskEnvironment.theta0",
    "test.sigma_r": "TestConfig.sigma_r", "test.lambda_r": "TestConfig.lambda_r",
    "test.alpha_r": "TestConfig.alpha_r", "test.n_r": "TestConfig.n_r",
    "test.n_s": "TestConfig.n_s", "test.num_test_tasks": "TestConfig.num_test_tasks",
    "sweep.repetitions": "SweepConfig.repetitions",
}

_CONSTRAINTS = {
    "env.p": lambda v: v >= 1 or "must be >= 1",
    "env.nu": lambda v: v >= 0 or "must be >= 0",
    "train.sigma": lambda v: v >= 0 or "must be >= 0",
    "train.lambda": lambda v: v > 0 or "must be > 0",
    "train.n_train": lambda v: v >= 1 or "must be >= 1",
    "train.n_val": lambda v: v >= 1 or "must be >= 1",
    "test.sigma_r": lambda v: v >= 0 or "must be >= 0",
    "test.lambda_r": lambda v: v > 0 or "must be > 0",
    "test.n_r": lambda v: v >= 1 or "must be >= 1",
    "test.n_s": lambda v: v >= 1 or "must be >= 1",
    "test.num_test_tasks": lambda v: v >= 1 or "must be >= 1",
    "sweep.budgets": lambda v: (len(v) > 0 and all(b >= 2 and b % 2 == 0 for b in v))
    or "must be a non-empty list of positive even integers",
    "sweep.n_grid": lambda v: (len(v) > 0 and all(n >= 1 for n in v))
    or "must be a non-empty list of positive integers",
    "sweep.repetitions": lambda v: v >= 1 or "must be >= 1",
    "sweep.bootstrap_samples": lambda v: v >= 1 or "must be >= 1",
    "easyhard.hard_sigma": lambda v: v >= 0 or "must be >= 0",
    "easyhard.hard_lambda": lambda v: v > 0 or "must be > 0",
    "moments.trials": lambda v: v >= 100 or "must be >= 100",
    "moments.n_max": lambda v: v >= 1 or "must be >= 1",
    "moments.p_max": lambda v: v >= 1 or "must be >= 1",
    "moments.lambdas": lambda v: (len(v) > 0 and all(x > 0 for x in v)) or "must be positive",
}


@dataclass(frozen=True)
class Config:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def env(self) -> TaskEnvironment:
        return TaskEnvironment.constant(self["env.p"], self["env.theta0"], self["env.nu"])

    @property
    def train_spec(self) -> TaskSpec:
        return TaskSpec(self["train.sigma"], self["train.lambda"], self["train.alpha"],
                        self["train.n_train"], self["train.n_val"])

    @property
    def hard_spec(self) -> TaskSpec:
        return TaskSpec(self["easyhard.hard_sigma"], self["easyhard.hard_lambda"],
                        self["train.alpha"], self["train.n_train"], self["train.n_val"])

    @property
    def test(self) -> TestConfig:
        return TestConfig(self["test.sigma_r"], self["test.lambda_r"], self["test.alpha_r"],
                          self["test.n_r"], self["test.n_s"], self["test.num_test_tasks"])

    @property
    def sweep(self) -> SweepConfig:
        return SweepConfig(
            budgets=self["sweep.budgets"], n_grid=self["sweep.n_grid"],
            repetitions=self["sweep.repetitions"], env=self.env,
            train_spec=self.train_spec, test=self.test,
            master_seed=self["sweep.master_seed"],
            common_test_tasks=self["sweep.common_test_tasks"],
        )

    def with_overrides(self, **flat) -> "Config":
        vals = dict(self.values)
        for k, v in flat.items():
            if v is not None:
                vals[k] = v
        return validate(vals)


def validate(values: dict) -> Config:
    for key, check in _CONSTRAINTS.items():
        res = check(values[key])
        if res is not True:
            raise ConfigError(_FIELD.get(key, key), f"{res} (config key {key!r}, got {_fmt(values[key])})")
    return Config(values)


def parse_config_text(text: str) -> Config:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {val!r}: {exc}") from None
    return validate(values)


def parse_config(path: str | Path | None) -> Config:
    if path is None:
        return parse_config_text("")
    return parse_config_text(Path(path).read_text())


def serialize_config(config: Config) -> str:
    return "".join(f"{k} = {_fmt(config.values[k])}\n" for k in sorted(config.values))


def normalize_config_text(text: str) -> str:
    """Canonical form: every key present, sorted, values in canonical notation."""
    return serialize_config(parse_config_text(text))
