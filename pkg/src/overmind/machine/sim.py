"""Cycle-level model of the datapath executing a compiled program.

Functional path: every operand is broadcast in storage order as
``(address, value)`` pairs. Each enabled row filters the stream through its
window registers and computes its outputs only from the values it accepted.

Timing, per bundle (all counts in cycles)::

    stream     = ceil(streamed_elems / broadcast_width) [+ ceil(coefs / broadcast_width)]
    compute_r  = ceil(work_r / cols_used)                       linear rows
               = ceil(elems_r / threads_per_row) * issue_interval   Padé rows
    busy       = max(stream, max_r compute_r)
    drain      = mac_latency                                    linear
               = k * mac_latency + divider_depth                Padé
    total      = busy + stalls + drain

Stall causes:

* ``window_load``: one cycle per enabled row to load filter registers. In
  bypass mode it overlaps the previous bundle's drain; the baseline has no
  pre-decode and pays it on every bundle.
* ``l2_transfer`` (baseline only): ``ceil(working_set / l2_transfer_width)``.
* ``ddr_wait``: per DDR-resident operand, ``ddr_latency`` plus the extra
  streaming time at DDR bandwidth.
* ``shift_propagation`` (shift-register circular convolution): ``N`` cycles
  for every output rotation after the first.
* ``divider_wait``: Padé rows whose element count exceeds ``busy`` wait for
  the one-per-cycle row divider.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..compiler import HwConfig, row_work
from ..errors import ConfigError, MissingCalibration, ShapeError, SimulationFault
from ..graph import OpKind, TensorMeta
from ..isa import (DDR, WINDOWED_INPUTS, AddressWindowConfig, InstructionBundle, Opcode,
                   OperandDesc, Program)
from ..refexec import NP_DTYPES, QuantParams, TensorValue, quantize, requantize
from . import kernels

BYPASS = "bypass"
BASELINE = "baseline"
OFFSET = "offset"
SHIFT = "shift"
STALL_CAUSES = ("l2_transfer", "shift_propagation", "divider_wait", "ddr_wait", "window_load")

_POLE_EPSILON = 1e-6
_INT_MAC = {Opcode.MatMul, Opcode.Conv2D, Opcode.CircularConv, Opcode.ElemMul, Opcode.FuzzyAnd}
_POINTWISE = {Opcode.ElemAdd, Opcode.ElemMul, Opcode.FuzzyAnd, Opcode.FuzzyOr, Opcode.FuzzyNot,
              Opcode.PadeActivate}


@dataclass(frozen=True)
class SimConfig:
    hw: HwConfig = HwConfig()
    mode: str = BYPASS
    circ_impl: str = OFFSET
    l2_block_elems: Optional[int] = None      # baseline: per-thread L1 staging block
    l2_transfer_width: Optional[int] = None   # baseline: elements per cycle L2 -> L1
    mac_latency: int = 1
    divider_pipeline_depth: Optional[int] = None  # defaults to hw.divider_latency
    pade_issue_interval: int = 2   # power step and coefficient MAC share a multiplier
    trace: bool = False

    def __post_init__(self):
        if self.mode not in (BYPASS, BASELINE):
            raise ConfigError(f"mode must be {BYPASS!r} or {BASELINE!r}")
        if self.circ_impl not in (OFFSET, SHIFT):
            raise ConfigError(f"circ_impl must be {OFFSET!r} or {SHIFT!r}")
        has_l2 = (self.l2_block_elems is not None, self.l2_transfer_width is not None)
        if self.mode == BASELINE and not all(has_l2):
            raise ConfigError("baseline mode needs l2_block_elems and l2_transfer_width")
        if self.mode == BYPASS and any(has_l2):
            raise ConfigError("l2 parameters only apply to baseline mode")
        if self.mode == BASELINE and (self.l2_block_elems < 0 or self.l2_transfer_width < 1):
            raise ConfigError("l2_block_elems must be >= 0 and l2_transfer_width >= 1")
        if self.mac_latency < 1 or self.pade_issue_interval < 1:
            raise ConfigError("mac_latency and pade_issue_interval must be >= 1")
        if self.divider_pipeline_depth is not None and self.divider_pipeline_depth < 1:
            raise ConfigError("divider_pipeline_depth must be >= 1")

    @classmethod
    def baseline(cls, hw: HwConfig = HwConfig(), l2_block_elems: int = 256,
                 l2_transfer_width: int = 16, **kw) -> "SimConfig":
        return cls(hw, BASELINE, l2_block_elems=l2_block_elems,
                   l2_transfer_width=l2_transfer_width, **kw)

    @property
    def divider_depth(self) -> int:
        if self.divider_pipeline_depth is None:
            return self.hw.divider_latency
        return self.divider_pipeline_depth

    @property
    def sram_per_thread_bytes(self) -> int:
        """Staging memory per row thread: one bus beat, plus L1 blocks in the baseline."""
        beat = self.hw.broadcast_width * 4
        if self.mode == BYPASS:
            return beat
        groups = math.ceil(self.hw.R / self.l2_transfer_width)
        return beat + self.l2_block_elems * 4 * groups


@dataclass(frozen=True)
class FilterState:
    batch_start: int
    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int
    circ_offset: int = 0
    modulus: int = 0
    shape: tuple[int, ...] = (1,)
    strides: tuple[int, ...] = (1,)

    @classmethod
    def load(cls, w: AddressWindowConfig, operand: OperandDesc, rebase: int = 0) -> "FilterState":
        bs = w.batch_start if w.modulus else w.batch_start + rebase
        return cls(bs, w.row_lo, w.row_hi, w.col_lo, w.col_hi, w.circ_offset, w.modulus,
                   tuple(operand.shape), tuple(operand.strides))

    @property
    def window_length(self) -> int:
        return self.col_hi - self.col_lo + 1

    def registers(self) -> tuple[int, ...]:
        return (self.batch_start, self.row_lo, self.row_hi, self.col_lo, self.col_hi,
                self.circ_offset, self.modulus)


def window_accept(f: FilterState, addr_tag: int) -> bool:
    if f.modulus > 0:
        return (addr_tag - f.batch_start) % f.modulus < f.window_length
    off = addr_tag - f.batch_start
    if off < 0 or off >= math.prod(f.shape):
        return False
    coords = [0] * len(f.shape)
    for d in kernels.decomposition_order(f.shape, f.strides):
        coords[d], off = divmod(off, f.strides[d])
    row = coords[-2] if len(coords) >= 2 else 0
    return f.row_lo <= row <= f.row_hi and f.col_lo <= coords[-1] <= f.col_hi


@dataclass
class BundleTiming:
    index: int
    node_id: str
    opcode: str
    tile: int
    rows_enabled: int
    start_cycle: int
    stream_cycles: int
    compute_cycles: int
    busy_cycles: int
    drain_cycles: int
    stalls: dict[str, int]
    total_cycles: int
    pe_active_cycles: int


@dataclass
class SimReport:
    total_cycles: int = 0
    pe_active_cycles: int = 0
    utilization: float = 0.0
    stall_cycles: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STALL_CAUSES, 0))
    sram_elements_read: int = 0
    ddr_elements_read: int = 0
    broadcast_cycles: int = 0
    enabled_row_cycles: int = 0
    divider_ops: int = 0
    sram_per_thread_bytes: int = 0
    bundles: list[BundleTiming] = field(default_factory=list)
    trace: list[tuple[int, str, str]] = field(default_factory=list)

    def to_dict(self, include_trace: bool = False) -> dict:
        d = asdict(self)
        if not include_trace:
            d.pop("trace")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def trace_csv(self) -> str:
        lines = ["cycle,unit,event"]
        lines += [f"{c},{u},{e}" for c, u, e in self.trace]
        return "\n".join(lines) + "\n"


# -- helpers -----------------------------------------------------------------------

def _meta(o: OperandDesc, dtype: Optional[str] = None) -> TensorMeta:
    return TensorMeta(o.tensor_id, tuple(o.shape), dtype or o.dtype, tuple(o.strides), o.base_addr)


def _kind(op: Opcode) -> OpKind:
    return OpKind.Activation if op == Opcode.PadeActivate else OpKind[op.name]


def _gather_box(payload: np.ndarray, accepted: np.ndarray, f: FilterState) -> np.ndarray:
    """Values one row accepted, arranged as the rectangle its window describes."""
    idx = np.flatnonzero(accepted)
    coords = kernels.storage_coords(f.shape, f.strides, idx)
    nd = len(f.shape)
    box_shape = list(f.shape)
    box_shape[-1] = f.window_length
    coords[:, -1] -= f.col_lo
    if nd >= 2:
        box_shape[-2] = f.row_hi - f.row_lo + 1
        coords[:, -2] -= f.row_lo
    if idx.size != math.prod(box_shape):
        raise SimulationFault(f"row accepted {idx.size} elements for a {box_shape} window")
    box = np.empty(box_shape, dtype=payload.dtype)
    box[tuple(coords.T)] = payload[idx]
    return box


def _check_extent(f: FilterState, tensor_id: str) -> None:
    if f.modulus:
        if f.shape != (f.modulus,):
            raise SimulationFault(f"{tensor_id}: wrapped window modulus {f.modulus} does not "
                                  f"match operand shape {list(f.shape)}")
        return
    rows = f.shape[-2] if len(f.shape) >= 2 else 1
    if f.row_hi >= rows or f.col_hi >= f.shape[-1]:
        raise SimulationFault(f"{tensor_id}: window rows {f.row_lo}..{f.row_hi}, cols "
                              f"{f.col_lo}..{f.col_hi} exceed operand shape {list(f.shape)}")


class _Machine:
    def __init__(self, p: Program, cfg: SimConfig, qparams):
        self.p = p
        self.cfg = cfg
        self.qparams = qparams
        self.int8 = qparams is not None
        self.mem: dict[str, np.ndarray] = {}        # storage-order payloads
        self.metas: dict[str, TensorMeta] = {}
        self.pending: dict[str, np.ndarray] = {}    # logical buffers of tiled outputs
        self.best: dict[str, tuple] = {}            # running argmax per similarity node
        self.report = SimReport(sram_per_thread_bytes=cfg.sram_per_thread_bytes)
        self.prev_drain: Optional[int] = None
        self.cycle = 0

    # -- storage ------------------------------------------------------------------

    def scale(self, tid: str) -> float:
        if tid not in self.qparams:
            raise MissingCalibration(f"no quantization parameters for tensor {tid!r}")
        return self.qparams[tid].scale

    def storage_dtype(self, b: InstructionBundle, o: OperandDesc) -> str:
        if b.opcode == Opcode.SimilaritySearch:
            return "i32"
        return "i8" if self.int8 else o.dtype

    def load_input(self, o: OperandDesc, value) -> None:
        arr = value.array() if isinstance(value, TensorValue) else np.asarray(value)
        if arr.shape != tuple(o.shape):
            raise ShapeError(f"{o.tensor_id}: expected shape {list(o.shape)}, "
                             f"got {list(arr.shape)}")
        if self.int8:
            arr = quantize(arr.astype(np.float64), QuantParams(self.scale(o.tensor_id)))
            meta = _meta(o, "i8")
        else:
            meta = _meta(o)
            arr = arr.astype(NP_DTYPES[o.dtype])
        self.metas[o.tensor_id] = meta
        self.mem[o.tensor_id] = TensorValue.from_array(meta, arr).payload

    def logical(self, tid: str) -> np.ndarray:
        return TensorValue(self.metas[tid], self.mem[tid]).array()

    # -- execution ----------------------------------------------------------------

    def bundle(self, i: int, b: InstructionBundle) -> None:
        if b.opcode == Opcode.Activation:
            raise ConfigError(f"bundle {i}: exact Activation is not executable; "
                              "compile activations to PadeActivate")
        for o in b.inputs:
            if o.tensor_id not in self.mem:
                raise SimulationFault(f"bundle {i} reads {o.tensor_id!r} before it is written")
        ins = list(b.inputs)
        out = b.output
        windowed = WINDOWED_INPUTS[b.opcode]
        rows = [self.p.R * b.tile_index + j for j in b.enabled_rows()]

        # filter each windowed operand's broadcast stream, row by row
        accepts, filters, streamed = {}, {}, {}
        for k in windowed:
            o = ins[k]
            rebase = o.base_addr - ins[windowed[0]].base_addr
            fs = [FilterState.load(w, o, rebase) for w in b.windows]
            for f in fs:
                _check_extent(f, o.tensor_id)
            addrs = o.base_addr + np.arange(o.numel, dtype=np.int64)
            acc = kernels.accept_matrix(addrs, np.array([f.registers() for f in fs],
                                                        dtype=np.int64).reshape(-1, 7),
                                        o.shape, o.strides)
            if acc.shape[0] and not acc.any(axis=1).all():
                raise SimulationFault(f"bundle {i}: an enabled row accepts nothing from "
                                      f"{o.tensor_id!r}")
            accepts[k], filters[k] = acc, fs
            streamed[k] = int(acc.any(axis=0).sum())
        for k, o in enumerate(ins):
            streamed.setdefault(k, o.numel)

        out_dtype = self.storage_dtype(b, out)
        if out.tensor_id not in self.pending:
            self.pending[out.tensor_id] = np.zeros(out.shape, dtype=np.float64 if out_dtype == "f32"
                                                   else np.int64)
        buf = self.pending[out.tensor_id]
        elems = self.compute(b, ins, rows, accepts, filters, buf)
        if b.tile_index == b.tile_count - 1:
            meta = _meta(out, out_dtype)
            self.metas[out.tensor_id] = meta
            self.mem[out.tensor_id] = TensorValue.from_array(meta, buf.astype(NP_DTYPES[out_dtype])).payload
            del self.pending[out.tensor_id]
        self.timing(i, b, ins, rows, streamed, elems)

    def compute(self, b, ins, rows, accepts, filters, buf) -> list[int]:
        """Fill ``buf`` for the enabled rows; returns elements produced per row."""
        op = b.opcode
        int8 = self.int8
        vals = [self.mem[o.tensor_id] for o in ins]
        integer = int8 or vals[0].dtype.kind == "i"
        cdt = np.int64 if integer else np.float64
        if int8:
            scales = [self.scale(o.tensor_id) for o in ins]
            out_scale = 1.0 if op == Opcode.SimilaritySearch else self.scale(b.output.tensor_id)
        produced = []
        for j, g in enumerate(rows if op != Opcode.CircularConv else ()):
            boxes = {k: _gather_box(vals[k], accepts[k][j], filters[k][j]).astype(cdt)
                     for k in accepts}
            if op in _POINTWISE:
                res = self.pointwise(b, [boxes[k] for k in sorted(boxes)],
                                     scales if int8 else None, out_scale if int8 else None)
                if len(b.output.shape) >= 2:
                    buf[..., g:g + 1, :] = res
                else:
                    buf[...] = res
            elif op == Opcode.MatMul:
                a = boxes[0].reshape(-1)
                res = a @ self.logical(ins[1].tensor_id).astype(cdt)
                if int8:
                    res = requantize(res, scales[0] * scales[1] / out_scale)
                if len(b.output.shape) >= 2:
                    buf[g, :] = res
                else:
                    buf[...] = res
            elif op == Opcode.Conv2D:
                w = self.logical(ins[1].tensor_id).astype(cdt)
                s = b.attr("stride", 1)
                win = sliding_window_view(boxes[0], w.shape[2:], axis=(1, 2))[:, ::s, ::s]
                res = np.einsum("chwij,ocij->ohw", win, w)[:, 0, :]
                if int8:
                    res = requantize(res, scales[0] * scales[1] / out_scale)
                buf[:, g, :] = res
            elif op == Opcode.SimilaritySearch:
                self.similarity(b, g, boxes[1].reshape(-1),
                                self.logical(ins[0].tensor_id).astype(cdt), buf)
            else:
                raise ConfigError(f"unsupported opcode {op.name}")
            produced.append(int(np.size(res)) if op != Opcode.SimilaritySearch else 0)
        if op == Opcode.CircularConv and rows:
            produced = self.circular(b, ins, rows, accepts[1], filters[1], cdt, buf,
                                     scales if int8 else None, out_scale if int8 else None)
        if op == Opcode.SimilaritySearch and b.tile_index == b.tile_count - 1:
            buf[0] = self.best.pop(b.node_id)[1]
            produced[-1:] = [1]
        return produced

    def pointwise(self, b, xs, scales, out_scale):
        op = b.opcode
        if scales is not None:
            if op in _INT_MAC:
                return requantize(xs[0] * xs[1], scales[0] * scales[1] / out_scale)
            xs = [x.astype(np.float64) * s for x, s in zip(xs, scales)]
        if op == Opcode.ElemAdd:
            y = xs[0] + xs[1]
        elif op in (Opcode.ElemMul, Opcode.FuzzyAnd):
            y = xs[0] * xs[1]
        elif op == Opcode.FuzzyOr:
            y = xs[0] + xs[1] - xs[0] * xs[1]
        elif op == Opcode.FuzzyNot:
            y = 1.0 - xs[0]
        else:
            q = b.pade
            x = np.minimum(np.maximum(xs[0], q.range[0]), q.range[1])
            num, den = kernels.pade_eval(q.a, q.b, x)
            if np.any(np.abs(den) < _POLE_EPSILON):
                raise SimulationFault(f"{b.node_id}: divider input below {_POLE_EPSILON}")
            y = num / den
        if scales is not None:
            return quantize(y, QuantParams(out_scale))
        return y

    def similarity(self, b, g, row, query, buf):
        score = row @ query
        if b.attr("metric", 0) == 1:
            norm = float(np.linalg.norm(row.astype(np.float64)) *
                         np.linalg.norm(query.astype(np.float64)))
            score = score / norm if norm > 0 else 0.0
        elif self.int8:
            score = int(np.int64(score).astype(np.int32))
        best = self.best.get(b.node_id)
        if best is None or score > best[0]:
            self.best[b.node_id] = (score, g)

    def circular(self, b, ins, rows, acc, fs, cdt, buf, scales, out_scale):
        a = self.logical(ins[0].tensor_id).astype(cdt)
        bvals = self.mem[ins[1].tensor_id].astype(cdt)
        n = fs[0].modulus
        if self.cfg.circ_impl == OFFSET:
            addrs = ins[1].base_addr + np.arange(ins[1].numel, dtype=np.int64)
            res = kernels.circ_conv_rows(addrs, bvals, acc, [f.batch_start for f in fs], n, a)
        else:
            # staggered shift chain: row g sees B rotated by g positions
            res = np.array([np.dot(a, np.roll(bvals[::-1], g + 1)) for g in rows], dtype=cdt)
        if scales is not None:
            res = requantize(res, scales[0] * scales[1] / out_scale)
        buf[rows] = res
        return [1] * len(rows)

    # -- timing -------------------------------------------------------------------

    def timing(self, i, b, ins, rows, streamed, produced) -> None:
        cfg, hw, rep = self.cfg, self.cfg.hw, self.report
        op = b.opcode
        pe = b.pe_config
        kind = _kind(op)
        in_shapes = [tuple(o.shape) for o in ins]
        work = row_work(kind, in_shapes, tuple(b.output.shape))
        total_stream = sum(streamed.values())
        stream = math.ceil(total_stream / hw.broadcast_width)
        k = pe.pade_order
        if k:
            stream += math.ceil((2 * k + 1) / hw.broadcast_width)
        per_row_elems = [work] * len(rows)
        if op in _POINTWISE:
            per_row_elems = produced
        if k:
            compute = [math.ceil(e / pe.threads_per_row) * cfg.pade_issue_interval
                       for e in per_row_elems]
            active = sum(per_row_elems) * 2 * k * cfg.pade_issue_interval
        else:
            cols = max(1, pe.cols_used)
            compute = [math.ceil(w / cols) for w in per_row_elems]
            active = sum(per_row_elems)
        busy = max([stream] + compute)
        drain = k * cfg.mac_latency + cfg.divider_depth if k else cfg.mac_latency

        stalls = dict.fromkeys(STALL_CAUSES, 0)
        load = len(b.windows)
        if cfg.mode == BYPASS and self.prev_drain is not None:
            stalls["window_load"] = max(0, load - self.prev_drain)
        else:
            stalls["window_load"] = load
        out_elems = sum(produced)
        if cfg.mode == BASELINE:
            stalls["l2_transfer"] = math.ceil((total_stream + out_elems) / cfg.l2_transfer_width)
        ddr_counts = [streamed[idx] for idx, o in enumerate(ins) if o.placement == DDR]
        if b.output.placement == DDR:
            ddr_counts.append(out_elems)
        for n in ddr_counts:
            stalls["ddr_wait"] += hw.ddr_latency + max(
                0, math.ceil(n / hw.ddr_bandwidth) - math.ceil(n / hw.broadcast_width))
        if op == Opcode.CircularConv and cfg.circ_impl == SHIFT:
            n = b.attr("N", b.output.shape[0])
            stalls["shift_propagation"] = sum(n for g in rows if g > 0)
        if k:
            stalls["divider_wait"] = max(0, max(per_row_elems, default=0) - busy)
        total = busy + sum(stalls.values()) + drain

        start = self.cycle
        if cfg.trace:
            t = start
            for cause in STALL_CAUSES:
                if stalls[cause]:
                    rep.trace.append((t, "control" if cause != "ddr_wait" else "ddr",
                                      f"stall:{cause}:{stalls[cause]}"))
                    t += stalls[cause]
            rep.trace.append((t, "bus", f"stream_begin:{b.node_id}:{b.tile_index}"))
            rep.trace.append((t + stream, "bus", "stream_end"))
            rep.trace.append((t + busy, "pe", "compute_end"))
            rep.trace.append((start + total, "pe", "drain_end"))
        self.cycle += total
        self.prev_drain = drain

        for idx, o in enumerate(ins):
            if o.placement == DDR:
                rep.ddr_elements_read += streamed[idx]
            else:
                rep.sram_elements_read += streamed[idx]
        rep.total_cycles += total
        rep.pe_active_cycles += active
        rep.broadcast_cycles += stream
        rep.enabled_row_cycles += len(rows) * busy
        rep.divider_ops += sum(per_row_elems) if k else 0
        for cause, v in stalls.items():
            rep.stall_cycles[cause] += v
        rep.bundles.append(BundleTiming(i, b.node_id, op.name, b.tile_index, len(rows), start,
                                        stream, max(compute, default=0), busy, drain, stalls,
                                        total, active))


def program_inputs(p: Program) -> list[OperandDesc]:
    """Operands read before any bundle writes them, in first-use order."""
    written, seen, out = set(), set(), []
    for b in p.bundles:
        for o in b.inputs:
            if o.tensor_id not in written and o.tensor_id not in seen:
                seen.add(o.tensor_id)
                out.append(o)
        written.add(b.output.tensor_id)
    return out


def program_outputs(p: Program) -> list[str]:
    """Tensors written by the program and never read afterwards."""
    read = {o.tensor_id for b in p.bundles for o in b.inputs}
    out = []
    for b in p.bundles:
        tid = b.output.tensor_id
        if tid not in read and tid not in out:
            out.append(tid)
    return out


def run(p: Program, inputs: Mapping, cfg: SimConfig = SimConfig(),
        qparams: Optional[Mapping[str, QuantParams]] = None,
        keep_all: bool = False) -> tuple[dict[str, TensorValue], SimReport]:
    """Simulate ``p``. INT8 datapath when ``qparams`` is given, otherwise f32.

    Returns the program's sink tensors (or every tensor when ``keep_all``) and
    the timing report.
    """
    hw = cfg.hw
    if (p.R, p.C, p.sram_bytes) != (hw.R, hw.C, hw.sram_bytes):
        raise ConfigError(f"program built for R={p.R} C={p.C} sram={p.sram_bytes}, "
                          f"config has R={hw.R} C={hw.C} sram={hw.sram_bytes}")
    m = _Machine(p, cfg, qparams)
    for o in program_inputs(p):
        if o.tensor_id not in inputs:
            raise ShapeError(f"missing program input {o.tensor_id!r}")
        m.load_input(o, inputs[o.tensor_id])
    for i, b in enumerate(p.bundles):
        m.bundle(i, b)
    rep = m.report
    if rep.total_cycles:
        rep.utilization = rep.pe_active_cycles / (rep.total_cycles * hw.R * hw.C)
    wanted = list(m.mem) if keep_all else program_outputs(p)
    outs = {tid: TensorValue(m.metas[tid], m.mem[tid]) for tid in wanted}
    return outs, rep
