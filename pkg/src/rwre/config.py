"""Experiment configuration read from TOML.

A config has a top-level ``seed`` (required, 64-bit unsigned), an optional
``workers`` count, and the tables ``[law]``, ``[budget]``, ``[thresholds]``
and ``[output]``.  Validation reports every problem at once.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from rwre._rng import MAX_SEED
from rwre.env import ConfigError, EnvironmentLaw, law_from_config
from rwre.estimators import Budget, Thresholds

_TOP_KEYS = {"seed", "workers", "law", "budget", "thresholds", "output", "name"}
_OUTPUT_KEYS = {"dir", "raw", "figures"}


@dataclass(frozen=True)
class ExperimentConfig:
    law: EnvironmentLaw
    budget: Budget
    thresholds: Thresholds
    seed: int
    workers: int = 1
    out_dir: Path = Path("out")
    raw: bool = False
    figures: bool = False
    name: str = ""

    def semantic_dict(self) -> dict:
        """Fields that affect statistics; worker count and output location do not."""
        return {
            "law": self.law.to_dict(),
            "budget": asdict(self.budget),
            "thresholds": asdict(self.thresholds),
            "seed": self.seed,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed=None, workers=None, out_dir=None, raw=None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = _check_seed(seed, [])
        if workers is not None:
            changes["workers"] = workers
        if out_dir is not None:
            changes["out_dir"] = Path(out_dir)
        if raw:
            changes["raw"] = True
        return replace(self, **changes)


def _check_seed(value, problems: list[str]) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= MAX_SEED:
        problems.append(f"seed must be an integer in [0, 2^64 - 1], got {value!r}")
        return 0
    return value


def _table_dataclass(cls, table, section: str, problems: list[str]):
    if table is None:
        return cls()
    if not isinstance(table, dict):
        problems.append(f"[{section}] must be a table")
        return None
    names = {f.name for f in fields(cls)}
    for key in sorted(set(table) - names):
        problems.append(f"{section}.{key} is not a known field (expected one of {sorted(names)})")
    kw = {k: v for k, v in table.items() if k in names}
    # check field by field so every bad value is reported
    for f in fields(cls):
        if f.name not in kw:
            continue
        try:
            cls(**{f.name: kw[f.name]})
        except ConfigError as exc:
            problems.extend(exc.problems)
        except TypeError as exc:
            problems.append(f"{section}.{f.name}: {exc}")
    try:
        return cls(**kw)
    except (ConfigError, TypeError):
        return None


def config_from_dict(data: dict, seed: int | None = None) -> ExperimentConfig:
    problems: list[str] = []
    for key in sorted(set(data) - _TOP_KEYS):
        problems.append(f"{key} is not a known top-level key")

    if seed is None and "seed" not in data:
        problems.append("seed is required (set it in the config or pass --seed)")
    seed_value = _check_seed(seed if seed is not None else data.get("seed", 0), problems)

    workers = data.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        problems.append(f"workers must be a positive integer, got {workers!r}")
        workers = 1

    law = None
    if "law" not in data:
        problems.append("[law] table is required")
    else:
        try:
            law = law_from_config(data["law"])
        except ConfigError as exc:
            problems.extend(exc.problems)

    budget = _table_dataclass(Budget, data.get("budget"), "budget", problems)
    thresholds = _table_dataclass(Thresholds, data.get("thresholds"), "thresholds", problems)

    output = data.get("output", {})
    for key in sorted(set(output) - _OUTPUT_KEYS):
        problems.append(f"output.{key} is not a known field")
    for key in ("raw", "figures"):
        if key in output and not isinstance(output[key], bool):
            problems.append(f"output.{key} must be true or false, got {output[key]!r}")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        law=law,
        budget=budget,
        thresholds=thresholds,
        seed=seed_value,
        workers=workers,
        out_dir=Path(output.get("dir", "out")),
        raw=bool(output.get("raw", False)),
        figures=bool(output.get("figures", False)),
        name=str(data.get("name", "")),
    )


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    cfg = config_from_dict(data, seed)
    return cfg if cfg.name else replace(cfg, name=path.stem)


def shipped_configs() -> dict[str, Path]:
    """Example configs bundled with the package, by name."""
    root = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.toml"))}
