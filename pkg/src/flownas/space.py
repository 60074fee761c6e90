"""Hyperparameter ranges, random blocks and the mutation operator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .arch import Architecture, BlockSpec, HwThresholds, check_constraints
from .errors import BudgetExhausted

log = logging.getLogger(__name__)

MUTATION_KINDS = ("insert", "remove", "modify")
MAX_REDRAWS = 32


@dataclass(frozen=True)
class SearchSpaceConfig:
    filters_range: tuple[int, int] = (16, 140)
    kernel_range: tuple[int, int] = (3, 7)
    stride_range: tuple[int, int] = (1, 6)
    dropout_range: tuple[float, float] = (0.1, 0.5)
    dropout_prob: float = 0.5
    pool_sizes: tuple[int, ...] = (2, 3)
    pool_kinds: tuple[str, ...] = ("max", "avg", "none")
    paddings: tuple[str, ...] = ("valid", "same")
    max_depth: int = 5
    mutations_per_child: int = 2

    def __post_init__(self):
        for name in ("filters_range", "kernel_range", "stride_range", "dropout_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if not self.pool_sizes or not self.pool_kinds or not self.paddings:
            raise ValueError("pool_sizes, pool_kinds and paddings must be non-empty")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


DEFAULT_SPACE = SearchSpaceConfig()

# a_0 when the run config names none
DEFAULT_INITIAL_BLOCK = BlockSpec(filters=32, kernel=5, stride=2, padding="valid")


def initial_architecture(input_len: int, n_classes: int) -> Architecture:
    return Architecture(input_len, n_classes, (DEFAULT_INITIAL_BLOCK,))


def range_violations(block: BlockSpec, space: SearchSpaceConfig) -> list[tuple[str, str]]:
    """(field, message) for every block field outside the search space."""
    bad = []
    for name, rng in (("filters", space.filters_range), ("kernel", space.kernel_range),
                      ("stride", space.stride_range)):
        v = getattr(block, name)
        if not rng[0] <= v <= rng[1]:
            bad.append((name, f"{name}={v} outside [{rng[0]}, {rng[1]}]"))
    if block.padding not in space.paddings:
        bad.append(("padding", f"padding {block.padding!r} not allowed"))
    if block.pool_kind not in space.pool_kinds:
        bad.append(("pool_kind", f"pool kind {block.pool_kind!r} not allowed"))
    if block.has_pool:
        for name in ("pool_size", "pool_stride"):
            v = getattr(block, name)
            if v not in space.pool_sizes:
                bad.append((name, f"{name}={v} not in {list(space.pool_sizes)}"))
        if block.pool_padding not in space.paddings:
            bad.append(("pool_padding", f"pool padding {block.pool_padding!r} not allowed"))
    lo, hi = space.dropout_range
    if block.dropout != 0 and not lo <= block.dropout <= hi:
        bad.append(("dropout", f"dropout={block.dropout} outside {{0}} U [{lo}, {hi}]"))
    return bad


def _draw_int(rng: np.random.Generator, bounds) -> int:
    return int(rng.integers(bounds[0], bounds[1], endpoint=True))


def _draw_choice(rng: np.random.Generator, options):
    return options[int(rng.integers(len(options)))]


def _draw_field(name: str, space: SearchSpaceConfig, rng: np.random.Generator):
    if name == "filters":
        return _draw_int(rng, space.filters_range)
    if name == "kernel":
        return _draw_int(rng, space.kernel_range)
    if name == "stride":
        return _draw_int(rng, space.stride_range)
    if name in ("padding", "pool_padding"):
        return _draw_choice(rng, space.paddings)
    if name in ("pool_size", "pool_stride"):
        return _draw_choice(rng, space.pool_sizes)
    if name == "dropout":
        if rng.random() < space.dropout_prob:
            return float(rng.uniform(*space.dropout_range))
        return 0.0
    raise KeyError(name)


def _with_pool_kind(block: BlockSpec, kind: str, space, rng) -> BlockSpec:
    if kind == "none":
        return replace(block, pool_kind="none", pool_size=0, pool_stride=0,
                       pool_padding="valid")
    if block.has_pool:
        return replace(block, pool_kind=kind)
    size = _draw_choice(rng, space.pool_sizes)
    return replace(block, pool_kind=kind, pool_size=size, pool_stride=size,
                   pool_padding=_draw_choice(rng, space.paddings))


def random_block(space: SearchSpaceConfig, rng: np.random.Generator) -> BlockSpec:
    block = BlockSpec(
        filters=_draw_field("filters", space, rng),
        kernel=_draw_field("kernel", space, rng),
        stride=_draw_field("stride", space, rng),
        padding=_draw_field("padding", space, rng),
    )
    block = _with_pool_kind(block, _draw_choice(rng, space.pool_kinds), space, rng)
    return replace(block, dropout=_draw_field("dropout", space, rng))


def _mutable_fields(block: BlockSpec) -> list[str]:
    names = ["filters", "kernel", "stride", "padding", "pool_kind", "dropout"]
    if block.has_pool:
        names += ["pool_size", "pool_stride", "pool_padding"]
    return names


def modify_block(block: BlockSpec, space: SearchSpaceConfig, rng: np.random.Generator) -> BlockSpec:
    name = _draw_choice(rng, _mutable_fields(block))
    if name == "pool_kind":
        return _with_pool_kind(block, _draw_choice(rng, space.pool_kinds), space, rng)
    return replace(block, **{name: _draw_field(name, space, rng)})


def apply_mutation(blocks: list[BlockSpec], kind: str, space, rng) -> None:
    if kind == "insert":
        pos = int(rng.integers(len(blocks) + 1))
        blocks.insert(pos, random_block(space, rng))
    elif kind == "remove":
        del blocks[int(rng.integers(len(blocks)))]
    else:
        pos = int(rng.integers(len(blocks)))
        blocks[pos] = modify_block(blocks[pos], space, rng)


def _draw_kind(n_blocks: int, space: SearchSpaceConfig, rng) -> str:
    for _ in range(MAX_REDRAWS):
        kind = _draw_choice(rng, MUTATION_KINDS)
        if kind == "insert" and n_blocks >= space.max_depth:
            continue
        if kind == "remove" and n_blocks <= 1:
            continue
        return kind
    return "modify"


def mutate(parent: Architecture, space: SearchSpaceConfig, rng: np.random.Generator) -> Architecture:
    """Child of ``parent`` after ``space.mutations_per_child`` random edits.

    Kinds are drawn uniformly and may repeat; a kind that would break the
    depth bounds is redrawn. Shape validity is left to the constraint gate.
    """
    blocks = list(parent.blocks)
    for _ in range(space.mutations_per_child):
        apply_mutation(blocks, _draw_kind(len(blocks), space, rng), space, rng)
    return Architecture(parent.input_len, parent.n_classes, tuple(blocks), parent.input_channels)


def spawn_admissible(
    parent: Architecture,
    space: SearchSpaceConfig,
    th: HwThresholds,
    n: int,
    rng: np.random.Generator,
    max_attempts: Optional[int] = None,
) -> tuple[list[Architecture], int]:
    """Mutate ``parent`` until ``n`` children pass the hardware gate.

    Each rejected child is discarded and a fresh one is drawn from the
    parent. Returns the children and the total number of candidates drawn.
    """
    cap = 1000 * n if max_attempts is None else max_attempts
    children: list[Architecture] = []
    attempts = 0
    while len(children) < n:
        if attempts >= cap:
            raise BudgetExhausted(
                f"only {len(children)} of {n} admissible children after {attempts} attempts"
            )
        child = mutate(parent, space, rng)
        attempts += 1
        verdict = check_constraints(child, th)
        if verdict.admissible:
            children.append(child)
        else:
            log.debug("rejected child (%s): %s", ", ".join(verdict.violations), child)
    return children, attempts
