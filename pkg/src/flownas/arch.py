"""Block-wise 1D-CNN genomes, shape inference and analytic hardware cost.

A block is ``conv -> batch norm -> ReLU -> [pool] -> [dropout]``; every
architecture ends in global average pooling and a dense softmax head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import DegenerateShape, ParseError

PADDINGS = ("valid", "same")
POOL_KINDS = ("none", "max", "avg")

# Batch-norm parameters counted per channel: gamma/beta plus running
# mean/variance ("full"), gamma/beta only ("trainable"), or not at all.
BN_PARAMS_PER_CHANNEL = {"full": 4, "trainable": 2, "none": 0}


@dataclass(frozen=True)
class BlockSpec:
    filters: int
    kernel: int
    stride: int = 1
    padding: str = "valid"
    pool_kind: str = "none"
    pool_size: int = 0
    pool_stride: int = 0
    pool_padding: str = "valid"
    dropout: float = 0.0

    def __post_init__(self):
        if self.filters < 1 or self.kernel < 1 or self.stride < 1:
            raise ValueError(f"filters, kernel and stride must be positive: {self}")
        if self.padding not in PADDINGS or self.pool_padding not in PADDINGS:
            raise ValueError(f"padding must be one of {PADDINGS}")
        if self.pool_kind not in POOL_KINDS:
            raise ValueError(f"pool_kind must be one of {POOL_KINDS}")
        if self.has_pool and (self.pool_size < 1 or self.pool_stride < 1):
            raise ValueError("pooling needs positive pool_size and pool_stride")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def has_pool(self) -> bool:
        return self.pool_kind != "none"


@dataclass(frozen=True)
class Architecture:
    input_len: int
    n_classes: int
    blocks: tuple[BlockSpec, ...]
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.input_len < 1 or self.n_classes < 1 or self.input_channels < 1:
            raise ValueError("input_len, n_classes and input_channels must be positive")

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def with_input_len(self, input_len: int) -> "Architecture":
        return Architecture(input_len, self.n_classes, self.blocks, self.input_channels)


@dataclass(frozen=True)
class TensorShape:
    length: int
    channels: int

    @property
    def elements(self) -> int:
        return self.length * self.channels

    def __str__(self):
        return f"{self.length}x{self.channels}"


@dataclass(frozen=True)
class HwCost:
    params: int
    flops: int
    max_tensor: int


@dataclass(frozen=True)
class HwThresholds:
    params: float
    max_tensor: float
    flops: float

    def __post_init__(self):
        if min(self.params, self.max_tensor, self.flops) <= 0:
            raise ValueError("thresholds must be positive")


DEFAULT_THRESHOLDS = HwThresholds(params=120_000, max_tensor=22_000, flops=11_000_000)
UNBOUNDED = HwThresholds(math.inf, math.inf, math.inf)


def conv_out_len(in_len: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-in_len // stride)
    return (in_len - kernel) // stride + 1


def same_padding(in_len: int, kernel: int, stride: int) -> tuple[int, int]:
    """(left, right) zero padding for 'same'; the odd zero goes right."""
    out = -(-in_len // stride)
    total = max((out - 1) * stride + kernel - in_len, 0)
    return total // 2, total - total // 2


@dataclass(frozen=True)
class Layer:
    """One row of the per-layer cost table."""

    name: str
    kind: str
    input: TensorShape
    output: TensorShape
    params: int
    flops: int


def layer_table(arch: Architecture, bn_params: str = "full") -> list[Layer]:
    """Every inference-time layer with its shapes, parameters and FLOPs."""
    bn_per_ch = BN_PARAMS_PER_CHANNEL[bn_params]
    rows: list[Layer] = []
    shape = TensorShape(arch.input_len, arch.input_channels)

    def add(name, kind, out, params, flops):
        nonlocal shape
        if out.length < 1:
            raise DegenerateShape(
                f"{name}: output length {out.length} < 1 from input {shape}"
            )
        rows.append(Layer(name, kind, shape, out, params, flops))
        shape = out

    for i, b in enumerate(arch.blocks, start=1):
        c_in = shape.channels
        out = TensorShape(conv_out_len(shape.length, b.kernel, b.stride, b.padding), b.filters)
        if b.padding == "valid" and shape.length < b.kernel:
            out = TensorShape(0, b.filters)
        add(f"block{i}.conv", "conv",
            out,
            b.kernel * c_in * b.filters + b.filters,
            2 * out.length * b.filters * b.kernel * c_in)
        add(f"block{i}.bn", "bn", shape, bn_per_ch * b.filters, 2 * shape.elements)
        add(f"block{i}.relu", "relu", shape, 0, shape.elements)
        if b.has_pool:
            plen = conv_out_len(shape.length, b.pool_size, b.pool_stride, b.pool_padding)
            if b.pool_padding == "valid" and shape.length < b.pool_size:
                plen = 0
            pooled = TensorShape(plen, shape.channels)
            add(f"block{i}.{b.pool_kind}pool", f"{b.pool_kind}pool", pooled, 0,
                b.pool_size * pooled.elements)
        if b.dropout > 0:
            add(f"block{i}.dropout", "dropout", shape, 0, 0)

    add("gap", "gap", TensorShape(1, shape.channels), 0, shape.elements)
    c = shape.channels
    add("dense", "dense", TensorShape(1, arch.n_classes),
        c * arch.n_classes + arch.n_classes, 2 * c * arch.n_classes)
    add("softmax", "softmax", shape, 0, 5 * arch.n_classes)
    return rows


def infer_shapes(arch: Architecture) -> list[TensorShape]:
    """Input shape of each conv, pool, GAP and dense layer, in order.

    This is the "input dimension" trace: the model input followed by the
    output of every shape-changing layer, ending with the GAP vector.
    """
    trace = [TensorShape(arch.input_len, arch.input_channels)]
    for row in layer_table(arch):
        if row.kind in ("conv", "gap") or row.kind.endswith("pool"):
            trace.append(row.output)
    return trace


def count_params(arch: Architecture, bn_params: str = "full") -> int:
    return sum(r.params for r in layer_table(arch, bn_params))


def count_flops(arch: Architecture) -> int:
    return sum(r.flops for r in layer_table(arch))


def max_tensor(arch: Architecture) -> int:
    table = layer_table(arch)
    return max([arch.input_len * arch.input_channels] + [r.output.elements for r in table])


def estimate(arch: Architecture, bn_params: str = "full") -> HwCost:
    table = layer_table(arch, bn_params)
    return HwCost(
        params=sum(r.params for r in table),
        flops=sum(r.flops for r in table),
        max_tensor=max([arch.input_len * arch.input_channels]
                       + [r.output.elements for r in table]),
    )


@dataclass(frozen=True)
class Verdict:
    violations: tuple[str, ...]
    cost: Optional[HwCost] = None

    @property
    def admissible(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.admissible


def check_constraints(arch: Architecture, th: HwThresholds, bn_params: str = "full") -> Verdict:
    """Strict ``<`` test of all three budgets; reports every violation.

    Tags are ``params``, ``max_tensor``, ``flops``, or ``degenerate`` when
    shape inference fails.
    """
    try:
        cost = estimate(arch, bn_params)
    except DegenerateShape:
        return Verdict(("degenerate",))
    bad = []
    if not cost.params < th.params:
        bad.append("params")
    if not cost.max_tensor < th.max_tensor:
        bad.append("max_tensor")
    if not cost.flops < th.flops:
        bad.append("flops")
    return Verdict(tuple(bad), cost)


# Winning architecture from the reference search (11-class VPN-nonVPN head).
TABLE_IV = Architecture(
    input_len=784,
    n_classes=11,
    blocks=(
        BlockSpec(filters=129, kernel=7, stride=5, padding="valid"),
        BlockSpec(filters=110, kernel=4, stride=2, padding="valid",
                  pool_kind="avg", pool_size=3, pool_stride=2, pool_padding="same"),
        BlockSpec(filters=38, kernel=7, stride=2, padding="valid",
                  pool_kind="max", pool_size=2, pool_stride=2, pool_padding="same"),
    ),
)


# -- text format -----------------------------------------------------------

_BLOCK_INT = ("filters", "kernel", "stride", "pool_size", "pool_stride")
_BLOCK_STR = ("padding", "pool_kind", "pool_padding")
_BLOCK_FLOAT = ("dropout",)
_BLOCK_KEYS = {f.name for f in fields(BlockSpec)}
_TOP_KEYS = ("input_len", "n_classes", "input_channels")


def serialize_arch(arch: Architecture) -> str:
    lines = [
        f"input_len = {arch.input_len}",
        f"input_channels = {arch.input_channels}",
        f"n_classes = {arch.n_classes}",
    ]
    for b in arch.blocks:
        lines += ["", "[block]"]
        for f in fields(BlockSpec):
            lines.append(f"{f.name} = {getattr(b, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"


def _convert(key, raw, line):
    try:
        if key in _BLOCK_INT or key in _TOP_KEYS:
            return int(raw)
        if key in _BLOCK_FLOAT:
            return float(raw)
    except ValueError:
        raise ParseError(f"cannot read {raw!r} as a number", line, key) from None
    return raw


def parse_arch(text: str, strict: bool = True, space=None) -> Architecture:
    """Parse the key/value architecture format.

    Lines are ``key = value``; ``[block]`` starts a new block; ``#`` starts a
    comment. With ``strict`` every block must also lie inside the search
    space ranges (``space`` defaults to the standard one).
    """
    top: dict[str, int] = {}
    blocks: list[tuple[int, dict]] = []
    current: Optional[dict] = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[block]":
            current = {}
            blocks.append((lineno, current))
            continue
        if line.startswith("["):
            raise ParseError(f"unknown section {line}", lineno)
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if current is None:
            if key not in _TOP_KEYS:
                raise ParseError("unknown top-level key", lineno, key)
            target = top
        else:
            if key not in _BLOCK_KEYS:
                raise ParseError("unknown block key", lineno, key)
            target = current
        if key in target:
            raise ParseError("duplicate key", lineno, key)
        target[key] = _convert(key, value, lineno)

    for key in ("input_len", "n_classes"):
        if key not in top:
            raise ParseError("missing required key", None, key)
    if not blocks:
        raise ParseError("architecture has no [block] sections")

    specs = []
    for lineno, kv in blocks:
        for key in ("filters", "kernel"):
            if key not in kv:
                raise ParseError("block missing required key", lineno, key)
        if kv.get("pool_kind", "none") != "none":
            kv.setdefault("pool_stride", kv.get("pool_size", 0))
        try:
            spec = BlockSpec(**kv)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if strict:
            from .space import DEFAULT_SPACE, range_violations

            for bad_field, msg in range_violations(spec, space or DEFAULT_SPACE):
                raise ParseError(msg, lineno, bad_field)
        specs.append(spec)
    try:
        arch = Architecture(top["input_len"], top["n_classes"], tuple(specs),
                            top.get("input_channels", 1))
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if strict:
        from .space import DEFAULT_SPACE

        if arch.depth > (space or DEFAULT_SPACE).max_depth:
            raise ParseError(f"{arch.depth} blocks exceed max depth", None, "block")
    return arch
