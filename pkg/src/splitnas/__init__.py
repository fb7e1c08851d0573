"""Joint search of network architecture and split point for split computing.

A categorical search distribution over (per-layer block choice, split point)
is updated with adaptive stochastic natural gradients against a penalized
objective: a packet-loss-averaged model loss plus the excess of end-to-end
latency (head compute + transfer + tail compute) over a threshold.
"""
from .space import (
    ArchSample,
    SearchSpaceSpec,
    SpaceError,
    bundled_space,
    cardinality,
    decode,
    encode,
    load_space,
)

__version__ = "0.1.0"

__all__ = [
    "ArchSample",
    "SearchSpaceSpec",
    "SpaceError",
    "bundled_space",
    "cardinality",
    "decode",
    "encode",
    "load_space",
    "__version__",
]
