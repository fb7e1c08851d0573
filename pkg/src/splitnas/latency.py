"""Compute, communication and end-to-end latency for split inference.

Units are fixed throughout: latency in milliseconds, data in bits, compute in
FLOPs, device power in GFLOPS, link throughput in bit/s.

Compute latency comes from either a per-(layer, block, device) lookup table
or from FLOPs divided by a device's fitted computation power.  Fixed prefix
and suffix costs live in table rows with layer index -1 (prefix) and -2
(suffix).
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .space import (
    ArchSample,
    SearchSpaceSpec,
    block_flops_split,
    part_flops,
    intermediate_size,
)

log = logging.getLogger(__name__)

PREFIX_ROW = -1
SUFFIX_ROW = -2
FIXED_BLOCK = "fixed"

__all__ = [
    "LatencyError",
    "LatencyTable",
    "LinkModel",
    "LatencyBreakdown",
    "LatencyModel",
    "comp_latency_tabular",
    "comp_latency_flops",
    "estimate_power",
    "estimate_power_from_table",
    "comm_latency",
    "penalty",
    "part_items",
    "read_latency_table",
    "write_latency_table",
    "read_device_power",
    "table_from_nested_lut",
]


class LatencyError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyTable:
    entries: Mapping[tuple[int, str, str], float]

    def __post_init__(self):
        for key, v in self.entries.items():
            if not v >= 0:
                raise LatencyError(f"negative or NaN latency at {key}: {v}")

    @property
    def devices(self) -> tuple[str, ...]:
        return tuple(sorted({d for _, _, d in self.entries}))

    def lookup(self, layer: int, block_id: str, device: str) -> float:
        try:
            return self.entries[(layer, block_id, device)]
        except KeyError:
            raise LatencyError(
                f"no latency entry for layer={layer}, block={block_id!r}, device={device!r}"
            ) from None

    def fixed(self, row: int, device: str) -> float:
        v = self.entries.get((row, FIXED_BLOCK, device))
        if v is None:
            which = "prefix" if row == PREFIX_ROW else "suffix"
            log.warning("latency table has no %s row for device %r; using 0 ms", which, device)
            return 0.0
        return v

    def check_space(self, space: SearchSpaceSpec, devices: Iterable[str]) -> None:
        for device in devices:
            for layer in space.layers:
                for bid in layer.candidates:
                    self.lookup(layer.layer_index, bid, device)


@dataclass(frozen=True)
class LinkModel:
    throughput_bps: float = 8.0e6
    bits_per_element: float = 32.0
    loss_prob: float = 0.0

    def __post_init__(self):
        if not self.throughput_bps > 0:
            raise LatencyError("link throughput must be > 0")
        if not self.bits_per_element > 0:
            raise LatencyError("quantization bits must be > 0")
        if not 0 <= self.loss_prob < 1:
            raise LatencyError("loss probability must lie in [0, 1)")


def comm_latency(n_h: int, link: LinkModel) -> float:
    """Transfer time of ``n_h`` elements in ms (loss adds no latency)."""
    if n_h < 0:
        raise LatencyError("element count must be >= 0")
    return link.bits_per_element * n_h * 1000.0 / link.throughput_bps


def comp_latency_flops(flop_count: float, gflops: float) -> float:
    if not gflops > 0:
        raise LatencyError("device power must be > 0")
    return flop_count / (gflops * 1e6)


def comp_latency_tabular(items: Iterable[tuple[int, str, float]], device: str, table: LatencyTable) -> float:
    """Sum of weighted table latencies; items are (layer, block_id, weight)."""
    total = 0.0
    for layer, bid, weight in items:
        if layer in (PREFIX_ROW, SUFFIX_ROW):
            total += weight * table.fixed(layer, device)
        else:
            total += weight * table.lookup(layer, bid, device)
    return total


def part_items(sample: ArchSample, space: SearchSpaceSpec) -> tuple[list, list]:
    """Table items for head and tail.

    A mid-block split apportions that block's table latency by its FLOPs share.
    """
    k = space.split_candidates[sample.split]
    head = [(PREFIX_ROW, FIXED_BLOCK, 1.0)]
    tail = []
    for i, (layer, c) in enumerate(zip(space.layers, sample.layer_choices)):
        bid = layer.candidates[c]
        if i < k - 1:
            head.append((i, bid, 1.0))
        elif i == k - 1:
            block = space.blocks[bid]
            if block.split_after_depthwise:
                front, back = block_flops_split(block, layer)
                share = front / (front + back)
                head.append((i, bid, share))
                tail.append((i, bid, 1.0 - share))
            else:
                head.append((i, bid, 1.0))
        else:
            tail.append((i, bid, 1.0))
    tail.append((SUFFIX_ROW, FIXED_BLOCK, 1.0))
    return head, tail


def estimate_power(pairs: Iterable[tuple[float, float]]) -> float:
    """Least-squares device power (GFLOPS) from (latency ms, FLOPs) pairs.

    Minimizes sum (T - C/pi)^2; with x = 1/pi this is linear least squares, so
    pi = sum C^2 / sum T*C.
    """
    pairs = list(pairs)
    if not pairs:
        raise LatencyError("no (latency, FLOPs) pairs to fit")
    scc = sum(c * c for _, c in pairs)
    stc = sum(t * c for t, c in pairs)
    if not stc > 0 or not scc > 0:
        raise LatencyError("cannot fit device power: sum of latency*FLOPs must be > 0")
    flops_per_ms = scc / stc
    return flops_per_ms / 1e6


def estimate_power_from_table(table: LatencyTable, space: SearchSpaceSpec, device: str) -> float:
    pairs = []
    for layer in space.layers:
        for bid in layer.candidates:
            c = sum(block_flops_split(space.blocks[bid], layer))
            pairs.append((table.lookup(layer.layer_index, bid, device), c))
    return estimate_power(pairs)


def penalty(T: float, T_th: float) -> float:
    return max(0.0, T - T_th)


@dataclass(frozen=True)
class LatencyBreakdown:
    head: float
    comm: float
    tail: float
    n_h: int

    @property
    def total(self) -> float:
        return self.head + self.comm + self.tail


@dataclass(frozen=True)
class LatencyModel:
    """Everything needed to turn a sample into an end-to-end latency."""

    mode: str  # "table" | "flops"
    head_device: str
    tail_device: str
    link: LinkModel = LinkModel()
    table: LatencyTable | None = None
    powers: Mapping[str, float] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("table", "flops"):
            raise LatencyError(f"unknown latency mode {self.mode!r}")
        devices = (self.head_device, self.tail_device)
        if self.mode == "table":
            if self.table is None:
                raise LatencyError("table mode needs a latency table")
        else:
            for d in devices:
                if d not in self.powers:
                    raise LatencyError(f"flops mode needs a power for device {d!r}")
                if not self.powers[d] > 0:
                    raise LatencyError(f"device {d!r} power must be > 0")

    def with_link(self, link: LinkModel) -> "LatencyModel":
        return LatencyModel(self.mode, self.head_device, self.tail_device, link, self.table, self.powers)

    def compute(self, sample: ArchSample, space: SearchSpaceSpec) -> tuple[float, float]:
        """(head ms on head device, tail ms on tail device)."""
        self.counters["compute"] += 1
        if self.mode == "flops":
            h, t = part_flops(sample, space)
            return (
                comp_latency_flops(h, self.powers[self.head_device]),
                comp_latency_flops(t, self.powers[self.tail_device]),
            )
        head, tail = part_items(sample, space)
        return (
            comp_latency_tabular(head, self.head_device, self.table),
            comp_latency_tabular(tail, self.tail_device, self.table),
        )

    def comm(self, sample: ArchSample, space: SearchSpaceSpec) -> tuple[float, int]:
        self.counters["comm"] += 1
        n_h = intermediate_size(sample, space)
        return comm_latency(n_h, self.link), n_h

    def end_to_end(self, sample: ArchSample, space: SearchSpaceSpec) -> LatencyBreakdown:
        head, tail = self.compute(sample, space)
        comm, n_h = self.comm(sample, space)
        return LatencyBreakdown(head=head, comm=comm, tail=tail, n_h=n_h)

    def on_device(self, layer_choices: Sequence[int], space: SearchSpaceSpec, device: str | None = None) -> float:
        """Whole-model compute latency on one device (no communication)."""
        device = device or self.head_device
        self.counters["compute"] += 1
        # the last split position puts every searchable block in the head
        full = ArchSample(tuple(layer_choices) + (space.n_layers,), space.sizes)
        if self.mode == "flops":
            return comp_latency_flops(sum(part_flops(full, space)), self.powers[device])
        head, tail = part_items(full, space)
        return comp_latency_tabular(head + tail, device, self.table)


# ----------------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------------

TABLE_COLUMNS = ("layer_index", "block_id", "device_id", "latency_ms")


def read_latency_table(path: str | Path) -> LatencyTable:
    entries = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TABLE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise LatencyError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (int(row["layer_index"]), row["block_id"].strip(), row["device_id"].strip())
                value = float(row["latency_ms"])
            except (TypeError, ValueError) as exc:
                raise LatencyError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not value >= 0 or math.isinf(value):
                raise LatencyError(f"{path}:{lineno}: latency must be finite and >= 0")
            entries[key] = value
    if not entries:
        raise LatencyError(f"{path}: empty latency table")
    return LatencyTable(entries)


def write_latency_table(table: LatencyTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for (layer, bid, dev), v in sorted(table.entries.items()):
            w.writerow([layer, bid, dev, repr(v)])


def read_device_power(path: str | Path) -> dict[str, float]:
    powers = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                powers[row["device_id"].strip()] = float(row["gflops"])
            except (KeyError, TypeError, ValueError) as exc:
                raise LatencyError(f"{path}:{lineno}: malformed row ({exc})") from None
    return powers


def table_from_nested_lut(lut: Mapping[str, Sequence[Sequence[float]]], space: SearchSpaceSpec) -> LatencyTable:
    """Build a table from ``lut[device][layer][candidate]`` (ms, candidate order of the space).

    This is the shape of a per-block latency export for a layer-wise space;
    fixed prefix/suffix rows are not part of it and default to 0.
    """
    entries = {}
    for device, rows in lut.items():
        if len(rows) != space.n_layers:
            raise LatencyError(f"device {device!r}: expected {space.n_layers} layers, got {len(rows)}")
        for layer, row in zip(space.layers, rows):
            if len(row) != len(layer.candidates):
                raise LatencyError(
                    f"device {device!r} layer {layer.layer_index}: expected "
                    f"{len(layer.candidates)} entries, got {len(row)}"
                )
            for bid, v in zip(layer.candidates, row):
                entries[(layer.layer_index, bid, device)] = float(v)
    return LatencyTable(entries)
