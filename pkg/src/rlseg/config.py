"""Run configuration: one JSON document with a section per module.

Every field is optional. Unknown keys are rejected. The top-level ``seed``
feeds every module seed unless a section sets its own; the ``RLS_SEED``
environment variable overrides the top-level seed.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .chanvese import CLSConfig
from .data import GenConfig
from .model import RLSConfig
from .train import TrainConfig

SEED_ENV = "RLS_SEED"
SECTIONS = ("data", "cls", "rls", "train", "bench", "fcn")
BENCH_METHODS = ("cls", "fcn", "rls")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple = BENCH_METHODS
    out_dir: str = "bench_out"
    repeats: int = 3

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        bad = [m for m in self.methods if m not in BENCH_METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; valid methods: {', '.join(BENCH_METHODS)}")


@dataclass(frozen=True)
class FCNConfig:
    hidden: int | None = None
    init_scale: float = 1.0
    # None falls back to the shared ``train`` section
    eta0: float | None = None
    batch_size: int | None = None
    epochs: int | None = None

    def __post_init__(self):
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden must be >= 1")

    def train_config(self, base: TrainConfig) -> TrainConfig:
        """``base`` with this section's non-null overrides applied."""
        kw = {k: getattr(self, k) for k in ("eta0", "batch_size", "epochs") if getattr(self, k) is not None}
        if "eta0" in kw:
            kw["eta_floor"] = min(base.eta_floor, kw["eta0"])
        return replace(base, **kw)


@dataclass
class RunConfig:
    seed: int = 0
    data: GenConfig = field(default_factory=GenConfig)
    cls: CLSConfig = field(default_factory=CLSConfig)
    rls: RLSConfig = field(default_factory=RLSConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fcn: FCNConfig = field(default_factory=FCNConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


_TYPES = {
    "data": GenConfig,
    "cls": CLSConfig,
    "rls": RLSConfig,
    "train": TrainConfig,
    "fcn": FCNConfig,
    "bench": BenchConfig,
}


def _build(name: str, cls, values, seed: int):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    if "seed" in known and "seed" not in kw:
        kw["seed"] = seed
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def parse_config(doc: dict, env: dict | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    env = os.environ if env is None else env
    seed = doc.get("seed", 0)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    sections = {name: _build(name, cls, doc.get(name, {}), seed) for name, cls in _TYPES.items()}
    return RunConfig(seed=seed, **sections)


def load_config(path=None, env: dict | None = None) -> RunConfig:
    """Read a config file; ``None`` gives all defaults (still honouring the env seed)."""
    if path is None:
        return parse_config({}, env)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, env)
