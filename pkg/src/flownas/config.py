"""Run configuration: a TOML file whose sections mirror the pipeline stages.

Example::

    seed = 7
    output_dir = "runs/toy"

    [data]
    dataset = "train.sess"     # or: toy = 400 (synthetic vectors)
    length = 784
    strategy = 2

    [thresholds]
    params = 120000
    max_tensor = 22000
    flops = 11000000

    [space]
    max_depth = 5

    [train]
    max_epochs = 20

    [search]
    generations = 100
    children = 10
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .arch import DEFAULT_THRESHOLDS, HwThresholds
from .engine.train import TrainConfig
from .errors import ConfigError, InputIOError
from .sessions import DEFAULT_LENGTH, STRATEGIES
from .space import DEFAULT_SPACE, SearchSpaceConfig

SEED_ENV = "FLOWNAS_SEED"


@dataclass(frozen=True)
class DataConfig:
    pcap_dir: Optional[str] = None
    labels: Optional[str] = None
    dataset: Optional[str] = None
    toy: Optional[int] = None
    toy_classes: int = 4
    length: int = DEFAULT_LENGTH
    strategy: int = 2


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    thresholds: HwThresholds = DEFAULT_THRESHOLDS
    space: SearchSpaceConfig = DEFAULT_SPACE
    train: TrainConfig = TrainConfig()
    generations: int = 100
    children: int = 10
    initial_arch: Optional[str] = None
    max_attempts: Optional[int] = None
    seed: int = 0
    output_dir: str = "runs/latest"
    source: Optional[str] = None

    def validate(self, check_paths: bool = True) -> None:
        if not 1 <= self.data.strategy <= len(STRATEGIES):
            raise ConfigError(f"strategy must be in 1..{len(STRATEGIES)}, got {self.data.strategy}")
        if self.data.length <= 0:
            raise ConfigError("length must be positive")
        if self.generations < 1 or self.children < 1:
            raise ConfigError("generations and children must be positive")
        if check_paths:
            for name in ("pcap_dir", "labels", "dataset"):
                p = getattr(self.data, name)
                if p is not None and not Path(p).exists():
                    raise InputIOError(f"{name} path does not exist: {p}")

    def snapshot(self) -> dict:
        """Plain-data view for manifests."""
        def plain(obj):
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, tuple):
                return [plain(v) for v in obj]
            return obj

        return plain(self)


def _build(cls, section: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_run_config(doc: dict, source: Optional[str] = None) -> RunConfig:
    doc = dict(doc)
    data = _build(DataConfig, doc.pop("data", {}), "data")
    th = doc.pop("thresholds", {})
    try:
        thresholds = replace(DEFAULT_THRESHOLDS, **th)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[thresholds] {exc}") from None
    space = _build(SearchSpaceConfig, doc.pop("space", {}), "space")
    train = _build(TrainConfig, doc.pop("train", {}), "train")
    search = doc.pop("search", {})
    top = {}
    for key, alias in (("generations", "generations"), ("children", "children"),
                       ("initial_arch", "initial_arch"), ("max_attempts", "max_attempts")):
        if alias in search:
            top[key] = search.pop(alias)
    if search:
        raise ConfigError(f"[search] unknown keys: {', '.join(sorted(search))}")
    for key in ("seed", "output_dir"):
        if key in doc:
            top[key] = doc.pop(key)
    if doc:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(doc))}")
    return RunConfig(data=data, thresholds=thresholds, space=space, train=train,
                     source=source, **top)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise InputIOError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = parse_run_config(doc, str(path))
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    return cfg
