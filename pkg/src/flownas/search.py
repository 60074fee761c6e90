"""Constraint-gated evolutionary architecture search.

Each generation mutates the current parent into admissible children, scores
every child by validation accuracy, and promotes the best child to parent.
The global best only changes on strict improvement.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .arch import (Architecture, HwCost, HwThresholds, DEFAULT_THRESHOLDS, estimate,
                   parse_arch, serialize_arch)
from .dataset import Dataset
from .engine.train import TrainConfig, multi_start_train
from .errors import CorruptCheckpoint
from .space import DEFAULT_SPACE, SearchSpaceConfig, spawn_admissible

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "flownas-search"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SearchConfig:
    n_generations: int = 100
    children_per_generation: int = 10
    thresholds: HwThresholds = DEFAULT_THRESHOLDS
    space: SearchSpaceConfig = DEFAULT_SPACE
    train: TrainConfig = TrainConfig()
    seed: int = 0
    max_attempts: Optional[int] = None  # per generation; None -> 1000 * children
    jobs: int = 1

    def __post_init__(self):
        if self.n_generations < 1 or self.children_per_generation < 1 or self.jobs < 1:
            raise ValueError("generation, child and job counts must be positive")


@dataclass
class ChildRecord:
    arch: Architecture
    cost: HwCost
    val_acc: float
    val_loss: float
    seconds: float = 0.0


@dataclass
class GenerationRecord:
    generation: int
    parent: Architecture
    children: list[ChildRecord]
    attempts: int
    best_child: int
    new_global_best: bool
    best_val_acc: float  # global best after this generation

    @property
    def mean_val_acc(self) -> float:
        return float(np.mean([c.val_acc for c in self.children]))


@dataclass
class SearchState:
    parent: Architecture
    seed: int
    best: Optional[Architecture] = None
    best_val_acc: float = float("-inf")
    best_val_loss: float = float("inf")
    records: list[GenerationRecord] = field(default_factory=list)

    @property
    def next_generation(self) -> int:
        return len(self.records)

    def to_dict(self, timing: bool = True) -> dict:
        def child(c: ChildRecord):
            d = {"arch": serialize_arch(c.arch), "cost": asdict(c.cost),
                 "val_acc": c.val_acc, "val_loss": c.val_loss}
            if timing:
                d["seconds"] = c.seconds
            return d

        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "parent": serialize_arch(self.parent),
            "best": serialize_arch(self.best) if self.best is not None else None,
            "best_val_acc": self.best_val_acc,
            "best_val_loss": self.best_val_loss,
            "records": [
                {
                    "generation": r.generation,
                    "parent": serialize_arch(r.parent),
                    "attempts": r.attempts,
                    "best_child": r.best_child,
                    "new_global_best": r.new_global_best,
                    "best_val_acc": r.best_val_acc,
                    "children": [child(c) for c in r.children],
                }
                for r in self.records
            ],
        }

    def fingerprint(self) -> str:
        """Canonical JSON of everything except wall-clock timings."""
        return json.dumps(self.to_dict(timing=False), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchState":
        def arch(text):
            return parse_arch(text, strict=False)

        records = []
        for r in d["records"]:
            children = [
                ChildRecord(arch(c["arch"]), HwCost(**c["cost"]), c["val_acc"],
                            c["val_loss"], c.get("seconds", 0.0))
                for c in r["children"]
            ]
            records.append(GenerationRecord(r["generation"], arch(r["parent"]), children,
                                            r["attempts"], r["best_child"],
                                            r["new_global_best"], r["best_val_acc"]))
        return cls(
            parent=arch(d["parent"]),
            seed=d["seed"],
            best=arch(d["best"]) if d["best"] is not None else None,
            best_val_acc=d["best_val_acc"],
            best_val_loss=d["best_val_loss"],
            records=records,
        )


def save_checkpoint(state: SearchState, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(state.to_dict(), fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> SearchState:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(d, dict) or d.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path}: not a search checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(
            f"{path}: checkpoint version {d.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    try:
        return SearchState.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed checkpoint ({exc})") from None


class Evaluator(Protocol):
    def __call__(self, arch: Architecture, generation: int, child: int) -> tuple[float, float, float]:
        """Return (validation accuracy, validation loss, seconds)."""


class TrainingEvaluator:
    """Scores a child by multi-start training; seeds depend only on its slot."""

    def __init__(self, train_set: Dataset, val_set: Dataset, cfg: TrainConfig, seed: int = 0):
        self.train_set, self.val_set, self.cfg, self.seed = train_set, val_set, cfg, seed

    def __call__(self, arch, generation, child):
        seed = int(np.random.SeedSequence([self.seed, generation, child]).generate_state(1)[0])
        cfg = TrainConfig(**{**asdict(self.cfg), "seed": seed})
        res = multi_start_train(arch, self.train_set, self.val_set, cfg)
        return res.val_acc, res.val_loss, res.seconds


def new_state(cfg: SearchConfig, initial: Architecture) -> SearchState:
    return SearchState(parent=initial, seed=cfg.seed)


def run_generation(state: SearchState, cfg: SearchConfig, evaluate: Evaluator) -> GenerationRecord:
    g = state.next_generation
    rng = np.random.default_rng([cfg.seed, g])
    children, attempts = spawn_admissible(state.parent, cfg.space, cfg.thresholds,
                                          cfg.children_per_generation, rng, cfg.max_attempts)

    def score(i):
        return evaluate(children[i], g, i)

    idx = range(len(children))
    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            scores = list(pool.map(score, idx))
    else:
        scores = [score(i) for i in idx]

    records = [ChildRecord(a, estimate(a), float(acc), float(loss), float(sec))
               for a, (acc, loss, sec) in zip(children, scores)]
    best = min(idx, key=lambda i: (-records[i].val_acc, records[i].val_loss, i))
    top = records[best]
    improved = top.val_acc > state.best_val_acc
    if improved:
        state.best, state.best_val_acc, state.best_val_loss = top.arch, top.val_acc, top.val_loss
    rec = GenerationRecord(g, state.parent, records, attempts, best, improved,
                           state.best_val_acc)
    state.records.append(rec)
    state.parent = top.arch
    log.info("generation %d: best child %.4f, mean %.4f, global best %.4f%s (%d attempts)",
             g, top.val_acc, rec.mean_val_acc, state.best_val_acc,
             " *" if improved else "", attempts)
    return rec


def run_search(
    cfg: SearchConfig,
    evaluate: Evaluator,
    initial: Optional[Architecture] = None,
    state: Optional[SearchState] = None,
    checkpoint_path=None,
    log_path=None,
    on_generation: Optional[Callable[[SearchState], None]] = None,
) -> SearchState:
    """Run (or resume, via ``state``) the search up to ``cfg.n_generations``.

    The state is checkpointed after every completed generation, so an
    exception mid-generation leaves the last whole generation on disk.
    """
    if state is None:
        if initial is None:
            raise ValueError("need an initial architecture or a state to resume")
        state = new_state(cfg, initial)
    elif state.seed != cfg.seed:
        raise ValueError(f"checkpoint seed {state.seed} differs from config seed {cfg.seed}")

    while state.next_generation < cfg.n_generations:
        rec = run_generation(state, cfg, evaluate)
        if checkpoint_path is not None:
            save_checkpoint(state, checkpoint_path)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(generation_log_entry(rec)) + "\n")
        if on_generation is not None:
            on_generation(state)
    return state


def generation_log_entry(rec: GenerationRecord) -> dict:
    return {
        "generation": rec.generation,
        "attempts": rec.attempts,
        "best_child": rec.best_child,
        "new_global_best": rec.new_global_best,
        "best_val_acc": rec.best_val_acc,
        "mean_val_acc": rec.mean_val_acc,
        "children": [
            {"val_acc": c.val_acc, "val_loss": c.val_loss, "params": c.cost.params,
             "flops": c.cost.flops, "max_tensor": c.cost.max_tensor, "seconds": c.seconds,
             "depth": c.arch.depth}
            for c in rec.children
        ],
    }


CURVE_HEADER = ("generation", "best_val_acc", "mean_val_acc", "new_best")


def export_curve(state: SearchState) -> list[tuple[int, float, float, bool]]:
    return [(r.generation, r.best_val_acc, r.mean_val_acc, r.new_global_best)
            for r in state.records]


def write_curve(state: SearchState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for g, best, mean, new in export_curve(state):
            w.writerow([g, repr(best), repr(mean), int(new)])

