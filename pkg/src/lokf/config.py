"""Declarative run configuration: file loading, validation, resolution.

Configs come from TOML or JSON files whose keys mirror
:class:`RunConfig` fields one-to-one; command-line flags override
individual fields. Validation collects field-level messages so the CLI
can report all problems at once (exit code 2).
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KNOWN_METHODS = ("alkf", "global_kf", "split_lkf", "naive_lkf", "fixed_lkf",
                 "robust_alkf")
KNOWN_SCENARIOS = ("hetero", "transfer", "blocks")

# per-scenario defaults for fields left unset (None) in the config
SCENARIO_DEFAULTS = {
    "hetero": {"c_main": 1.0, "prescreen": False, "score_path": "local"},
    "transfer": {"c_main": 1.0, "prescreen": False, "score_path": "local"},
    "blocks": {"c_main": 0.25, "prescreen": True, "score_path": "batch"},
}


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class RunConfig:
    """Everything a simulation campaign or analysis run needs."""

    scenario: str = "hetero"
    methods: tuple = ("alkf", "global_kf")
    n: tuple = (1000,)
    replicates: int = 10
    alpha: float = 0.1
    master_seed: int = 1
    output_dir: str = "lokf-output"
    threads: Optional[int] = None  # None: LOKF_THREADS env var, then 1
    g_max: int = 2
    c_main: Optional[float] = None
    prescreen: Optional[bool] = None
    score_path: Optional[str] = None
    use_prior: bool = True
    zeta_offset: float = 0.05
    xi_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    lambda_grid_size: int = 50
    lambda_grid_ratio: float = 1e-3
    cv_folds: int = 5
    min_subgroup: int = 30
    cloak_prob: float = 0.5
    pc_r_rule: object = "full"
    pc_c: float = 0.5
    fixed_env_covariates: tuple = (0, 1)
    homogeneity_all: bool = True
    blocks_count: int = 20
    blocks_width: int = 3
    blocks_amplitude: float = 20.0
    blocks_nonnull_frac: float = 0.2

    def resolved(self) -> "RunConfig":
        """Fill scenario-dependent fields left unset."""
        out = RunConfig(**asdict(self))
        defaults = SCENARIO_DEFAULTS.get(self.scenario, {})
        for key, value in defaults.items():
            if getattr(out, key) is None:
                setattr(out, key, value)
        return out

    def validate(self) -> list:
        errors = []
        if self.scenario not in KNOWN_SCENARIOS:
            errors.append(
                f"scenario: unknown scenario {self.scenario!r}; "
                f"expected one of {', '.join(KNOWN_SCENARIOS)}")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                errors.append(
                    f"methods: unknown method {m!r}; "
                    f"expected one of {', '.join(KNOWN_METHODS)}")
        if not self.methods:
            errors.append("methods: at least one method is required")
        if not 0 < self.alpha < 1:
            errors.append("alpha: must lie in (0, 1)")
        if self.replicates < 1:
            errors.append("replicates: must be at least 1")
        if not self.n or any(int(v) < 10 for v in self.n):
            errors.append("n: sample sizes must be at least 10")
        if self.threads is not None and self.threads < 1:
            errors.append("threads: must be at least 1")
        if self.g_max < 0:
            errors.append("g_max: must be non-negative")
        if self.c_main is not None and not 0 < self.c_main <= 1:
            errors.append("c_main: must lie in (0, 1]")
        if self.score_path not in (None, "local", "batch"):
            errors.append("score_path: must be 'local' or 'batch'")
        if self.zeta_offset <= 0:
            errors.append("zeta_offset: must be positive")
        if self.cv_folds < 2:
            errors.append("cv_folds: must be at least 2")
        if self.lambda_grid_size < 2:
            errors.append("lambda_grid_size: must be at least 2")
        if not 0 < self.lambda_grid_ratio < 1:
            errors.append("lambda_grid_ratio: must lie in (0, 1)")
        if self.min_subgroup < 1:
            errors.append("min_subgroup: must be at least 1")
        if not 0 < self.cloak_prob < 1:
            errors.append("cloak_prob: must lie in (0, 1)")
        if not 0 < self.pc_c < 1:
            errors.append("pc_c: must lie in (0, 1)")
        if self.pc_r_rule != "full":
            try:
                if int(self.pc_r_rule) < 1:
                    errors.append("pc_r_rule: fixed r must be at least 1")
            except (TypeError, ValueError):
                errors.append("pc_r_rule: must be 'full' or a positive integer")
        if any(not 0 <= x <= 1 for x in self.xi_grid):
            errors.append("xi_grid: entries must lie in [0, 1]")
        return errors


_TUPLE_FIELDS = {"methods", "n", "xi_grid", "fixed_env_covariates"}


def config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    errors = [f"{k}: unknown field" for k in raw if k not in known]
    if errors:
        raise ConfigError(errors)
    kwargs = {}
    for k, v in raw.items():
        kwargs[k] = tuple(v) if k in _TUPLE_FIELDS and isinstance(
            v, (list, tuple)) else v
    cfg = RunConfig(**kwargs)
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> RunConfig:
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text.decode("utf8"))
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a table/object"])
    return config_from_dict(raw)


def snapshot_json(cfg: RunConfig) -> str:
    """Resolved config as canonical JSON (provenance snapshot)."""
    return json.dumps(asdict(cfg.resolved()), sort_keys=True, indent=2)
