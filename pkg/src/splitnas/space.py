"""Joint architecture x split-point search domain.

A search space is a fixed macro architecture (prefix ops, searchable layers,
suffix ops) plus a candidate-block menu per layer.  The categorical domain is
one dimension per searchable layer and a final dimension for the split point.
Split position 0 sits after the fixed prefix; position ``l`` sits after
searchable layer ``l`` (1-based), or inside it when the chosen block is a
bottleneck block that splits after its depthwise stage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import yaml

__all__ = [
    "SpaceError",
    "CandidateBlock",
    "FixedOp",
    "LayerSpec",
    "SearchSpaceSpec",
    "ArchSample",
    "DecodedNetwork",
    "decode",
    "encode",
    "cardinality",
    "intermediate_size",
    "flops",
    "block_flops_split",
    "part_flops",
    "load_space",
    "bundled_space",
    "bundled_path",
    "iter_samples",
]


class SpaceError(ValueError):
    """Structural problem in a space definition or a sample."""


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class CandidateBlock:
    """One entry of the candidate-block menu (1x1 -> KxK depthwise -> 1x1)."""

    block_id: str
    kernel: int | None = None
    expansion: Fraction | None = None
    groups: int = 1
    is_skip: bool = False
    split_after_depthwise: bool = False

    def __post_init__(self):
        if self.is_skip:
            if self.kernel is not None or self.expansion is not None:
                raise SpaceError(f"skip block {self.block_id!r} must not set kernel/expansion")
            if self.split_after_depthwise:
                raise SpaceError("skip block cannot split mid-block")
            return
        if self.kernel is None or self.kernel < 1:
            raise SpaceError(f"block {self.block_id!r}: kernel must be a positive integer")
        if self.expansion is None or self.expansion <= 0:
            raise SpaceError(f"block {self.block_id!r}: expansion must be > 0")
        if self.groups < 1:
            raise SpaceError(f"block {self.block_id!r}: groups must be >= 1")
        if self.split_after_depthwise and self.expansion >= 1:
            raise SpaceError(
                f"block {self.block_id!r}: split_after_depthwise requires expansion < 1"
            )

    def mid_channels(self, in_channels: int) -> int:
        if self.is_skip:
            return in_channels
        return max(1, round_half_up(self.expansion * in_channels))


@dataclass(frozen=True)
class FixedOp:
    """Non-searchable op in the prefix or suffix."""

    name: str
    kind: str  # conv | linear | pool
    in_channels: int
    out_channels: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    kernel: int = 1
    stride: int = 1

    @property
    def out_elements(self) -> int:
        return self.out_channels * self.out_hw[0] * self.out_hw[1]

    def flops(self) -> int:
        h, w = self.out_hw
        if self.kind == "conv":
            return 2 * h * w * self.in_channels * self.out_channels * self.kernel**2
        if self.kind == "linear":
            return 2 * self.in_channels * self.out_channels
        if self.kind == "pool":
            return self.in_channels * self.in_hw[0] * self.in_hw[1]
        raise SpaceError(f"unknown fixed op kind {self.kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    layer_index: int
    in_channels: int
    out_channels: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    stride: int
    candidates: tuple[str, ...]

    @property
    def shape_preserving(self) -> bool:
        return self.in_channels == self.out_channels and self.in_hw == self.out_hw

    @property
    def in_elements(self) -> int:
        return self.in_channels * self.in_hw[0] * self.in_hw[1]

    @property
    def out_elements(self) -> int:
        return self.out_channels * self.out_hw[0] * self.out_hw[1]


@dataclass(frozen=True)
class SearchSpaceSpec:
    name: str
    blocks: dict[str, CandidateBlock]
    layers: tuple[LayerSpec, ...]
    prefix: tuple[FixedOp, ...]
    suffix: tuple[FixedOp, ...]
    split_candidates: tuple[int, ...]
    input_shape: tuple[int, int, int] = (3, 32, 32)
    note: str = ""

    def __post_init__(self):
        if not self.layers:
            raise SpaceError("space needs at least one searchable layer")
        if not self.prefix:
            raise SpaceError("space needs a fixed prefix (split position 0 sits after it)")
        if len(self.split_candidates) != len(self.layers) + 1:
            raise SpaceError(
                f"expected {len(self.layers) + 1} split candidates, got {len(self.split_candidates)}"
            )
        if tuple(self.split_candidates) != tuple(range(len(self.layers) + 1)):
            raise SpaceError("split candidates must be positions 0..L in order")
        for layer in self.layers:
            if not layer.candidates:
                raise SpaceError(f"layer {layer.layer_index} has no candidates")
            for bid in layer.candidates:
                block = self.blocks.get(bid)
                if block is None:
                    raise SpaceError(f"layer {layer.layer_index}: unknown block {bid!r}")
                if not block.is_skip:
                    c_mid = block.mid_channels(layer.in_channels)
                    if layer.in_channels % block.groups or c_mid % block.groups or layer.out_channels % block.groups:
                        raise SpaceError(
                            f"layer {layer.layer_index}: groups={block.groups} of {bid!r} "
                            "must divide the pointwise channel counts"
                        )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def arch_sizes(self) -> tuple[int, ...]:
        return tuple(len(layer.candidates) for layer in self.layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        """Category counts per dimension; the split dimension is last."""
        return self.arch_sizes + (len(self.split_candidates),)

    def block(self, layer: int, choice: int) -> CandidateBlock:
        return self.blocks[self.layers[layer].candidates[choice]]


@dataclass(frozen=True)
class ArchSample:
    """One joint draw: a category index per dimension.

    ``has_split=False`` marks architecture-only samples (no split dimension).
    """

    indices: tuple[int, ...]
    sizes: tuple[int, ...]
    has_split: bool = True

    def __post_init__(self):
        if len(self.indices) != len(self.sizes):
            raise SpaceError(f"sample has {len(self.indices)} dims, sizes has {len(self.sizes)}")
        for d, (i, k) in enumerate(zip(self.indices, self.sizes)):
            if not 0 <= i < k:
                raise SpaceError(f"dimension {d}: category {i} outside [0, {k})")

    @property
    def layer_choices(self) -> tuple[int, ...]:
        return self.indices[:-1] if self.has_split else self.indices

    @property
    def split(self) -> int | None:
        return self.indices[-1] if self.has_split else None

    def with_split(self, split: int, n_splits: int) -> "ArchSample":
        return ArchSample(self.layer_choices + (split,), self.layer_choices_sizes + (n_splits,))

    @property
    def layer_choices_sizes(self) -> tuple[int, ...]:
        return self.sizes[:-1] if self.has_split else self.sizes

    def onehots(self) -> list[np.ndarray]:
        out = []
        for i, k in zip(self.indices, self.sizes):
            a = np.zeros(k)
            a[i] = 1.0
            out.append(a)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate(self.onehots())

    @classmethod
    def from_onehots(cls, onehots: Sequence[np.ndarray], has_split: bool = True) -> "ArchSample":
        indices = []
        for d, a in enumerate(onehots):
            a = np.asarray(a)
            if a.sum() != 1 or not np.all((a == 0) | (a == 1)):
                raise SpaceError(f"dimension {d} is not one-hot")
            indices.append(int(np.argmax(a)))
        return cls(tuple(indices), tuple(len(a) for a in onehots), has_split)

    def sample_id(self) -> int:
        """Mixed-radix index, first dimension most significant."""
        idx = 0
        for i, k in zip(self.indices, self.sizes):
            idx = idx * k + i
        return idx

    @classmethod
    def from_id(cls, sample_id: int, sizes: Sequence[int], has_split: bool = True) -> "ArchSample":
        indices = []
        for k in reversed(sizes):
            sample_id, r = divmod(sample_id, k)
            indices.append(r)
        if sample_id:
            raise SpaceError("sample id out of range")
        return cls(tuple(reversed(indices)), tuple(sizes), has_split)


@dataclass(frozen=True)
class DecodedNetwork:
    """Concrete network: ordered blocks plus where the split falls."""

    prefix: tuple[str, ...]
    blocks: tuple[str, ...]
    suffix: tuple[str, ...]
    split: int
    mid_block: bool

    @property
    def head_blocks(self) -> tuple[str, ...]:
        return self.blocks[: self.split]

    @property
    def tail_blocks(self) -> tuple[str, ...]:
        return self.blocks[self.split :]

    @property
    def head(self) -> tuple[str, ...]:
        return self.prefix + self.head_blocks

    @property
    def tail(self) -> tuple[str, ...]:
        return self.tail_blocks + self.suffix

    def describe(self) -> str:
        head = " ".join(self.head)
        tail = " ".join(self.tail)
        marker = "|~" if self.mid_block else "|"
        return f"{head} {marker} {tail}"


def _check_dims(sample: ArchSample, space: SearchSpaceSpec) -> None:
    expected = space.sizes if sample.has_split else space.arch_sizes
    if tuple(sample.sizes) != expected:
        raise SpaceError(f"sample sizes {sample.sizes} do not match space sizes {expected}")


def decode(sample: ArchSample, space: SearchSpaceSpec) -> DecodedNetwork:
    _check_dims(sample, space)
    if sample.split is None:
        raise SpaceError("cannot decode a sample without a split point")
    blocks = tuple(
        layer.candidates[c] for layer, c in zip(space.layers, sample.layer_choices)
    )
    k = space.split_candidates[sample.split]
    mid = k > 0 and space.blocks[blocks[k - 1]].split_after_depthwise
    return DecodedNetwork(
        prefix=tuple(op.name for op in space.prefix),
        blocks=blocks,
        suffix=tuple(op.name for op in space.suffix),
        split=k,
        mid_block=mid,
    )


def encode(net: DecodedNetwork, space: SearchSpaceSpec) -> ArchSample:
    if len(net.blocks) != space.n_layers:
        raise SpaceError("block count does not match the space")
    try:
        choices = tuple(layer.candidates.index(b) for layer, b in zip(space.layers, net.blocks))
        split = space.split_candidates.index(net.split)
    except ValueError as exc:
        raise SpaceError(str(exc)) from None
    return ArchSample(choices + (split,), space.sizes)


def cardinality(space: SearchSpaceSpec) -> int:
    return math.prod(space.sizes)


def iter_samples(space: SearchSpaceSpec, with_split: bool = True) -> Iterator[ArchSample]:
    """All samples in mixed-radix (sample id) order."""
    sizes = space.sizes if with_split else space.arch_sizes
    for sid in range(math.prod(sizes)):
        yield ArchSample.from_id(sid, sizes, with_split)


def intermediate_size(sample: ArchSample, space: SearchSpaceSpec) -> int:
    """Element count of the head network's output."""
    _check_dims(sample, space)
    k = space.split_candidates[sample.split]
    if k == 0:
        return space.prefix[-1].out_elements
    layer = space.layers[k - 1]
    block = space.block(k - 1, sample.layer_choices[k - 1])
    if block.split_after_depthwise:
        h, w = layer.out_hw
        return block.mid_channels(layer.in_channels) * h * w
    return layer.out_elements


def block_flops_split(block: CandidateBlock, layer: LayerSpec) -> tuple[int, int]:
    """FLOPs of (1x1 expand + depthwise, final 1x1); one MAC = 2 FLOPs."""
    h, w = layer.in_hw
    ho, wo = layer.out_hw
    if block.is_skip:
        if layer.shape_preserving:
            return 0, 0
        # identity cannot change shape; a strided 1x1 projection stands in
        return 0, 2 * ho * wo * layer.in_channels * layer.out_channels
    c_mid = block.mid_channels(layer.in_channels)
    g = block.groups
    first = 2 * h * w * layer.in_channels * c_mid // g
    depthwise = 2 * ho * wo * c_mid * block.kernel**2
    last = 2 * ho * wo * c_mid * layer.out_channels // g
    return first + depthwise, last


def flops(block: CandidateBlock, layer: LayerSpec) -> int:
    return sum(block_flops_split(block, layer))


def part_flops(sample: ArchSample, space: SearchSpaceSpec) -> tuple[int, int]:
    """(head FLOPs, tail FLOPs) including the fixed prefix and suffix."""
    _check_dims(sample, space)
    k = space.split_candidates[sample.split]
    head = sum(op.flops() for op in space.prefix)
    tail = sum(op.flops() for op in space.suffix)
    for i, (layer, c) in enumerate(zip(space.layers, sample.layer_choices)):
        block = space.blocks[layer.candidates[c]]
        front, back = block_flops_split(block, layer)
        if i < k - 1:
            head += front + back
        elif i == k - 1:
            if block.split_after_depthwise:
                head += front
                tail += back
            else:
                head += front + back
        else:
            tail += front + back
    return head, tail


# ----------------------------------------------------------------------------
# loading
# ----------------------------------------------------------------------------


def _parse_fraction(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1000)
    return Fraction(str(value))


def _parse_block(entry: dict) -> CandidateBlock:
    if entry.get("skip", False):
        return CandidateBlock(block_id=str(entry["id"]), is_skip=True)
    return CandidateBlock(
        block_id=str(entry["id"]),
        kernel=int(entry["kernel"]),
        expansion=_parse_fraction(entry["expansion"]),
        groups=int(entry.get("groups", 1)),
        split_after_depthwise=bool(entry.get("split_after_depthwise", False)),
    )


def _out_hw(hw: tuple[int, int], stride: int) -> tuple[int, int]:
    return (-(-hw[0] // stride), -(-hw[1] // stride))


def _parse_fixed(entries: Iterable[dict], shape: tuple[int, int, int]) -> tuple[list[FixedOp], tuple[int, int, int]]:
    ops = []
    c, h, w = shape
    for e in entries:
        kind = e.get("kind", "conv")
        stride = int(e.get("stride", 1))
        if kind == "conv":
            out_c = int(e["out_channels"])
            out_hw = _out_hw((h, w), stride)
        elif kind == "pool":
            out_c, out_hw = c, (1, 1)
        elif kind == "linear":
            out_c, out_hw = int(e["out_channels"]), (1, 1)
            if (h, w) != (1, 1):
                raise SpaceError(f"linear op {e.get('name')!r} needs a 1x1 input; add a pool first")
        else:
            raise SpaceError(f"unknown fixed op kind {kind!r}")
        ops.append(
            FixedOp(
                name=str(e["name"]),
                kind=kind,
                in_channels=c,
                out_channels=out_c,
                in_hw=(h, w),
                out_hw=out_hw,
                kernel=int(e.get("kernel", 1)),
                stride=stride,
            )
        )
        c, (h, w) = out_c, out_hw
    return ops, (c, h, w)


def space_from_dict(doc: dict) -> SearchSpaceSpec:
    blocks = {}
    for entry in doc["blocks"]:
        b = _parse_block(entry)
        if b.block_id in blocks:
            raise SpaceError(f"duplicate block id {b.block_id!r}")
        blocks[b.block_id] = b
    default_candidates = tuple(doc.get("candidates", list(blocks)))
    input_shape = tuple(int(v) for v in doc.get("input", [3, 32, 32]))
    prefix, shape = _parse_fixed(doc["prefix"], input_shape)

    layers = []
    c, h, w = shape
    for stage in doc["layers"]:
        repeat = int(stage.get("repeat", 1))
        for r in range(repeat):
            stride = int(stage.get("stride", 1)) if r == 0 else 1
            out_c = int(stage["out_channels"])
            out_hw = _out_hw((h, w), stride)
            layers.append(
                LayerSpec(
                    layer_index=len(layers),
                    in_channels=c,
                    out_channels=out_c,
                    in_hw=(h, w),
                    out_hw=out_hw,
                    stride=stride,
                    candidates=tuple(stage.get("candidates", default_candidates)),
                )
            )
            c, (h, w) = out_c, out_hw
    suffix, _ = _parse_fixed(doc.get("suffix", []), (c, h, w))
    return SearchSpaceSpec(
        name=str(doc.get("name", "space")),
        blocks=blocks,
        layers=tuple(layers),
        prefix=tuple(prefix),
        suffix=tuple(suffix),
        split_candidates=tuple(range(len(layers) + 1)),
        input_shape=input_shape,
        note=str(doc.get("note", "")),
    )


def load_space(path: str | Path) -> SearchSpaceSpec:
    with open(path) as fh:
        return space_from_dict(yaml.safe_load(fh))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("splitnas") / "data" / name))


def bundled_space(name: str) -> SearchSpaceSpec:
    """Load one of the bundled space files, e.g. ``"fbnet_cifar100"``."""
    return load_space(bundled_path(f"{name}.yaml"))
