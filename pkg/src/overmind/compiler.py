"""Lowering of a validated graph to an instruction program.

Every node becomes one bundle per row tile, in topological order. The row
partition follows the output tensor:

* elementwise kinds and Activation: one row per slice along dim -2 of the
  output (a single row for 1-D tensors); each row reads the same slice of
  every input;
* MatMul: one row per row of A; B is broadcast whole;
* Conv2D: one row per output row ``ho``; the row reads input rows
  ``[ho*s, ho*s + kh - 1]`` across all channels; W is broadcast whole;
* SimilaritySearch: one row per codebook entry; the query is broadcast whole;
* CircularConv: row ``i`` reads all of B through a wrapped window starting at
  ``(base_B + i) mod N``; A is broadcast whole.

Nodes with more rows than the array are split into ``ceil(rows / R)`` tiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import pade
from .errors import ConfigError, PlacementError, TargetUnreachable
from .functions import get_function
from .graph import Graph, OpKind, OpNode, TensorMeta, topo_order, validate
from .isa import (DDR, SRAM, WINDOWED_INPUTS, AddressWindowConfig, InstructionBundle, Opcode,
                  OperandDesc, PEConfig, Program)

METRIC_CODES = {"dot": 0, "cosine": 1}


@dataclass(frozen=True)
class HwConfig:
    R: int = 32
    C: int = 16
    sram_bytes: int = 32768
    divider_latency: int = 8
    broadcast_width: int = 16
    ddr_latency: int = 100
    ddr_bandwidth: int = 8
    ddr_bytes: int = 1 << 30

    def __post_init__(self):
        if self.R < 1 or self.C < 1:
            raise ConfigError("R and C must be >= 1")
        if min(self.broadcast_width, self.ddr_bandwidth, self.divider_latency) < 1:
            raise ConfigError("bandwidths and divider latency must be >= 1")
        if self.sram_bytes < 0 or self.ddr_latency < 0 or self.ddr_bytes < 0:
            raise ConfigError("memory sizes and latencies must be non-negative")

    @property
    def pe_count(self) -> int:
        return self.R * self.C


@dataclass(frozen=True)
class CompileOptions:
    target_mae: float = 1e-3
    function_targets: Mapping[str, float] = field(default_factory=dict)
    max_pade_k: int = 8
    method: str = pade.LEAST_SQUARES
    fixed_k: Optional[int] = None         # bypass order selection (used by sweeps)

    def __post_init__(self):
        if not self.target_mae > 0 or any(not v > 0 for v in self.function_targets.values()):
            raise ValueError("target_mae must be > 0")
        if self.max_pade_k < 1:
            raise ValueError("max_pade_k must be >= 1")
        if self.fixed_k is not None and self.fixed_k < 1:
            raise ValueError("fixed_k must be >= 1")

    def target_for(self, function_id: str) -> float:
        return self.function_targets.get(function_id, self.target_mae)


# -- row geometry ----------------------------------------------------------------

def row_dim(shape) -> int:
    return shape[-2] if len(shape) >= 2 else 1


def output_rows(kind: OpKind, in_shapes, out_shape) -> int:
    if kind == OpKind.MatMul:
        return row_dim(in_shapes[0])
    if kind == OpKind.Conv2D:
        return out_shape[1]
    if kind == OpKind.SimilaritySearch:
        return in_shapes[1][0]
    if kind == OpKind.CircularConv:
        return out_shape[0]
    return row_dim(out_shape)


def row_work(kind: OpKind, in_shapes, out_shape) -> int:
    """MACs (or elements, for pointwise kinds) one row performs."""
    if kind == OpKind.MatMul:
        return in_shapes[1][0] * in_shapes[1][1]
    if kind == OpKind.Conv2D:
        cout, cin, kh, kw = in_shapes[1]
        return cout * out_shape[2] * cin * kh * kw
    if kind == OpKind.CircularConv:
        return out_shape[0]
    if kind == OpKind.SimilaritySearch:
        return in_shapes[1][1]
    return math.prod(out_shape) // row_dim(out_shape)


def _row_window(node: OpNode, metas: Mapping[str, TensorMeta], r: int) -> AddressWindowConfig:
    k = node.kind
    if k == OpKind.CircularConv:
        b = metas[node.inputs[1]]
        n = b.shape[0]
        return AddressWindowConfig((b.base_addr + r) % n, 0, 0, 0, n - 1, r, n)
    src = metas[node.inputs[WINDOWED_INPUTS[Opcode.for_kind(k)][0]]]
    cols = src.shape[-1]
    if k == OpKind.Conv2D:
        s = node.attrs.get("stride", 1)
        kh, kw = metas[node.inputs[1]].shape[2:]
        wo = metas[node.output].shape[2]
        return AddressWindowConfig(src.base_addr, r * s, r * s + kh - 1, 0, (wo - 1) * s + kw - 1)
    return AddressWindowConfig(src.base_addr, r, r, 0, cols - 1)


def tile_count(node: OpNode, metas: Mapping[str, TensorMeta], hw: HwConfig) -> int:
    rows = output_rows(node.kind, [metas[t].shape for t in node.inputs], metas[node.output].shape)
    return max(1, math.ceil(rows / hw.R))


def compute_windows(node: OpNode, metas: Mapping[str, TensorMeta], hw: HwConfig,
                    tile: int = 0) -> tuple[tuple[AddressWindowConfig, ...], int]:
    """Window table and row enable mask for one row tile of ``node``."""
    rows = output_rows(node.kind, [metas[t].shape for t in node.inputs], metas[node.output].shape)
    first = tile * hw.R
    if not 0 <= first < max(rows, 1):
        raise ValueError(f"tile {tile} out of range for {rows} rows")
    count = min(hw.R, rows - first)
    windows = tuple(_row_window(node, metas, first + j) for j in range(count))
    return windows, (1 << count) - 1


# -- Padé planning -----------------------------------------------------------------

def activation_range(node: OpNode) -> tuple[float, float]:
    rng = node.attrs.get("range")
    if rng is None:
        return get_function(node.attrs["function"]).default_range
    return float(rng[0]), float(rng[1])


def pade_pe_config(k: int, rows: int, hw: HwConfig) -> PEConfig:
    return PEConfig(rows, 2 * k, hw.C // (2 * k), k, True)


def plan_pade(node: OpNode, opts: CompileOptions, hw: HwConfig,
              rows: Optional[int] = None) -> tuple[pade.PadeApproximant, PEConfig]:
    """Approximant for an Activation node plus the PE configuration it needs."""
    spec = get_function(node.attrs["function"])
    rng = activation_range(node)
    max_k = min(opts.max_pade_k, hw.C // 2)
    if max_k < 1:
        raise ConfigError(f"C={hw.C} leaves no room for a Padé thread")
    cfg = pade.FitConfig(method=opts.method)
    try:
        if opts.fixed_k is not None:
            if opts.fixed_k > max_k:
                raise ConfigError(f"Padé order {opts.fixed_k} exceeds the limit {max_k}")
            approx = pade.fit(spec, opts.fixed_k, rng, cfg)
        else:
            approx = pade.select_order(spec, opts.target_for(spec.function_id), rng, max_k, cfg)
    except TargetUnreachable as e:
        raise TargetUnreachable(f"node {node.id!r}: {e}", node_id=node.id,
                                best_mae=e.best_mae) from None
    approx = approx.to_float32()
    pade.check_pole_free(approx)
    rows = min(hw.R, rows if rows is not None else hw.R)
    return approx, pade_pe_config(approx.k, rows, hw)


# -- memory placement ----------------------------------------------------------------

def place_memory(g: Graph, hw: HwConfig, reserved_bytes: int = 0) -> dict[str, str]:
    """Static SRAM/DDR assignment: most-reused first, then smallest, then id."""
    uses: dict[str, int] = {t: 0 for t in g.tensors}
    for n in g.nodes:
        for t in n.inputs:
            uses[t] += 1
    order = sorted(g.tensors.values(), key=lambda m: (-uses[m.id], m.nbytes, m.id))
    free = hw.sram_bytes - reserved_bytes
    placement = {}
    for meta in order:
        if meta.nbytes > hw.ddr_bytes:
            raise PlacementError(f"tensor {meta.id!r} ({meta.nbytes} bytes) exceeds DDR "
                                 f"capacity {hw.ddr_bytes}")
        if meta.nbytes <= free:
            placement[meta.id] = SRAM
            free -= meta.nbytes
        else:
            placement[meta.id] = DDR
    return placement


# -- lowering ------------------------------------------------------------------------

def _operand(meta: TensorMeta, role: str, placement: str) -> OperandDesc:
    return OperandDesc(meta.id, role, meta.dtype, meta.base_addr, meta.shape, meta.strides,
                       placement)


def _attrs(node: OpNode) -> tuple[tuple[str, int], ...]:
    if node.kind == OpKind.Conv2D:
        return (("stride", int(node.attrs.get("stride", 1))),)
    if node.kind == OpKind.CircularConv:
        return (("N", int(node.attrs["N"])),)
    if node.kind == OpKind.SimilaritySearch:
        return (("metric", METRIC_CODES[node.attrs.get("metric", "dot")]),)
    return ()


def lower(g: Graph, hw: HwConfig = HwConfig(), opts: CompileOptions = CompileOptions()) -> Program:
    validate(g)
    order = topo_order(g)
    plans = {}
    for node in order:
        if node.kind == OpKind.Activation:
            plans[node.id] = plan_pade(node, opts, hw)
    # coefficient blocks travel inside their bundles, so they take no tensor space
    placement = place_memory(g, hw)

    bundles = []
    for node in order:
        metas = g.tensors
        in_shapes = [metas[t].shape for t in node.inputs]
        out_shape = metas[node.output].shape
        operands = tuple(_operand(metas[t], "in", placement[t]) for t in node.inputs) + (
            _operand(metas[node.output], "out", placement[node.output]),)
        tiles = tile_count(node, metas, hw)
        work = row_work(node.kind, in_shapes, out_shape)
        for t in range(tiles):
            windows, mask = compute_windows(node, metas, hw, t)
            rows = len(windows)
            if node.kind == OpKind.Activation:
                approx, _ = plans[node.id]
                pe = pade_pe_config(approx.k, rows, hw)
            else:
                approx = None
                pe = PEConfig(rows, min(hw.C, work), 1, 0, False)
            bundles.append(InstructionBundle(Opcode.for_kind(node.kind), node.id, operands,
                                             windows, mask, pe, _attrs(node), approx, t, tiles))
    return Program(hw.R, hw.C, hw.sram_bytes, tuple(bundles))


def approximants(p: Program) -> dict[str, pade.PadeApproximant]:
    """Compiled approximant per Activation node id, for reference comparisons."""
    return {b.node_id: b.pade for b in p.bundles if b.pade is not None}
