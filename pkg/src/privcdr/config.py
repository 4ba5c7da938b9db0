"""Experiment configuration files: flat ``key = value`` pairs grouped in sections.

    [experiment]
    seed = 0
    out = runs/demo

    [synthetic]          ; or [dataset] path = DIR  (exactly one of the two)
    n_users = 300

    [train]
    epochs = 200
    ablate = obf, rev

    [sweep]
    lambda = 0, 0.01, 0.1, 1.0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .datasets import SyntheticSpec
from .model import TrainConfig

DEFAULT_GRIDS = {
    "alpha": (0.0, 1e-4, 1e-3, 1e-2, 1e-1),
    "lambda": (0.0, 0.01, 0.1, 1.0),
    "dim": (16, 32, 64, 128),
    "fusion": ("sum", "concat", "attention"),
}
SWEEP_FIELDS = {"alpha": "alpha", "lambda": "lam", "dim": "dim", "fusion": "fusion"}


class ConfigError(ValueError):
    pass


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, frozenset):
            return frozenset(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _section(cp: configparser.ConfigParser, name: str, cls, base):
    if not cp.has_section(name):
        return base
    known = {f.name: f for f in fields(cls)}
    changes = {}
    for key, raw in cp[name].items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]; expected one of {sorted(known)}")
        changes[key] = _coerce(f"[{name}] {key}", raw, getattr(base, key))
    return replace(base, **changes)


def _grid(name: str, raw: str) -> tuple:
    kind = str if name == "fusion" else (int if name == "dim" else float)
    try:
        values = tuple(kind(x.strip()) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"[sweep] {name}: cannot parse {raw!r}") from None
    if not values:
        raise ConfigError(f"[sweep] {name}: grid is empty")
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec | None = None
    dataset: Path | None = None
    prepared: Path | None = None
    k_core: int = 5
    seed: int = 0
    out: Path = Path("runs")
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))

    def __post_init__(self):
        if (self.synthetic is None) == (self.dataset is None):
            raise ConfigError("exactly one of [dataset] path or [synthetic] must be given")
        for name, grid in self.grids.items():
            if name not in DEFAULT_GRIDS:
                raise ConfigError(f"unknown sweep parameter {name!r}")
            if not grid:
                raise ConfigError(f"sweep grid {name!r} is empty")

    @property
    def prepared_dir(self) -> Path:
        return self.prepared if self.prepared is not None else self.out / "prepared"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        syn = None if self.synthetic is None else replace(self.synthetic, seed=seed)
        return replace(self, seed=seed, train=replace(self.train, seed=seed), synthetic=syn)


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"experiment", "synthetic", "dataset", "train", "sweep"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)}; expected {sorted(allowed)}")

    exp = cp["experiment"] if cp.has_section("experiment") else {}
    seed = int(exp.get("seed", 0))
    out = Path(exp.get("out", "runs"))
    out = out if out.is_absolute() else base_dir / out

    synthetic = None
    if cp.has_section("synthetic"):
        spec = _section(cp, "synthetic", SyntheticSpec, SyntheticSpec(seed=seed))
        synthetic = spec
    dataset = prepared = None
    k_core = 5
    if cp.has_section("dataset"):
        ds = cp["dataset"]
        unknown = set(ds) - {"path", "prepared", "k_core"}
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in [dataset]")
        if "path" in ds:
            dataset = Path(ds["path"]) if Path(ds["path"]).is_absolute() else base_dir / ds["path"]
        if "prepared" in ds:
            prepared = Path(ds["prepared"]) if Path(ds["prepared"]).is_absolute() else base_dir / ds["prepared"]
        k_core = int(ds.get("k_core", 5))

    train = _section(cp, "train", TrainConfig, TrainConfig(seed=seed))
    grids = dict(DEFAULT_GRIDS)
    if cp.has_section("sweep"):
        for key, raw in cp["sweep"].items():
            if key not in DEFAULT_GRIDS:
                raise ConfigError(f"unknown sweep parameter {key!r}; expected one of {sorted(DEFAULT_GRIDS)}")
            grids[key] = _grid(key, raw)
    return ExperimentConfig(train, synthetic, dataset, prepared, k_core, seed, out, grids)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
