"""Golden functional executor and INT8 post-training quantization.

Operator semantics (both modes):

* MatMul / Conv2D: dense, no padding, Conv2D honours ``attrs.stride``.
* ElemAdd / ElemMul: pointwise.
* Activation: exact function, or a supplied rational approximant evaluated
  with inputs clamped to its validated range.
* CircularConv: ``C[i] = sum_j A[j] * B[(i - j) mod N]``.
* SimilaritySearch: argmax over codebook rows of the dot product (or cosine
  when ``attrs.metric == "cosine"``), ties resolved to the lowest row.
* FuzzyAnd ``x*y``, FuzzyOr ``x + y - x*y``, FuzzyNot ``1 - x``.

INT8 mode is symmetric per-tensor (zero point 0). Products of int8 operands
accumulate in 32-bit integers; every node output is requantized with
round-half-to-even and saturated to [-128, 127].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from . import pade
from .errors import CalibrationError, MissingCalibration, ShapeError
from .functions import get_function
from .graph import Graph, OpKind, OpNode, TensorMeta, topo_order

NP_DTYPES = {"f32": np.float32, "i8": np.int8, "i32": np.int32}
QMIN, QMAX = -128, 127


@dataclass(frozen=True, eq=False)
class TensorValue:
    meta: TensorMeta
    payload: np.ndarray  # flat, in the layout given by meta.strides

    def __post_init__(self):
        if self.payload.ndim != 1 or self.payload.size != self.meta.numel:
            raise ShapeError(f"{self.meta.id}: payload of {self.payload.size} elements "
                             f"for shape {list(self.meta.shape)}")

    def array(self) -> np.ndarray:
        """Logical view (shape-indexed) over the payload."""
        item = self.payload.itemsize
        return as_strided(self.payload, self.meta.shape,
                          tuple(s * item for s in self.meta.strides), writeable=False)

    @classmethod
    def from_array(cls, meta: TensorMeta, arr, dtype=None) -> "TensorValue":
        arr = np.asarray(arr)
        if arr.shape != meta.shape:
            raise ShapeError(f"{meta.id}: expected shape {list(meta.shape)}, "
                             f"got {list(arr.shape)}")
        dtype = NP_DTYPES[meta.dtype] if dtype is None else dtype
        payload = np.zeros(meta.numel, dtype=dtype)
        item = payload.itemsize
        view = as_strided(payload, meta.shape, tuple(s * item for s in meta.strides))
        view[...] = arr
        return cls(meta, payload)

    def __eq__(self, other):
        return (isinstance(other, TensorValue) and self.meta == other.meta
                and self.payload.dtype == other.payload.dtype
                and np.array_equal(self.payload, other.payload))


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if self.zero_point != 0:
            raise ValueError("only symmetric quantization (zero_point 0) is supported")


def calibrate(t) -> QuantParams:
    data = np.asarray(t.payload if isinstance(t, TensorValue) else t, dtype=np.float64)
    if data.size == 0:
        raise CalibrationError("cannot calibrate an empty tensor")
    if not np.all(np.isfinite(data)):
        raise CalibrationError("tensor contains non-finite values")
    m = float(np.max(np.abs(data)))
    return QuantParams(m / 127.0 if m > 0 else 1.0)


def quantize(x, q: QuantParams):
    v = np.clip(np.rint(np.asarray(x, dtype=np.float64) / q.scale), QMIN, QMAX)
    if np.ndim(v) == 0:
        return int(v)
    return v.astype(np.int8)


def dequantize(v, q: QuantParams):
    out = np.asarray(v, dtype=np.float64) * q.scale
    return float(out) if np.ndim(out) == 0 else out


def requantize(acc, multiplier: float) -> np.ndarray:
    """int32 accumulator -> int8 via ``rint(acc * multiplier)`` with saturation."""
    acc32 = np.asarray(acc).astype(np.int64).astype(np.int32)
    return np.clip(np.rint(acc32.astype(np.float64) * multiplier), QMIN, QMAX).astype(np.int8)


def _wrap32(acc):
    return np.asarray(acc, dtype=np.int64).astype(np.int32)


# -- per-op kernels (shared definitions of the golden semantics) ---------------

def conv2d(x, w, stride):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,ocij->ohw", win, w)


def circular_conv(a, b):
    n = a.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return (a[None, :] * b[idx]).sum(axis=1)


def similarity_scores(q, cb, metric):
    scores = cb @ q
    if metric == "cosine":
        norms = np.linalg.norm(cb.astype(np.float64), axis=1) * np.linalg.norm(
            q.astype(np.float64))
        scores = np.where(norms > 0, scores / np.where(norms > 0, norms, 1.0), 0.0)
    return scores


def fuzzy_or(x, y):
    return x + y - x * y


def _linear(kind, args, attrs):
    if kind == OpKind.MatMul:
        return args[0] @ args[1]
    if kind == OpKind.Conv2D:
        return conv2d(args[0], args[1], attrs.get("stride", 1))
    if kind == OpKind.CircularConv:
        return circular_conv(args[0], args[1])
    if kind in (OpKind.ElemMul, OpKind.FuzzyAnd):
        return args[0] * args[1]
    if kind == OpKind.ElemAdd:
        return args[0] + args[1]
    raise AssertionError(kind)


def activation(node: OpNode, x: np.ndarray, approximants) -> np.ndarray:
    p = approximants.get(node.id) if approximants else None
    if p is not None:
        return pade.evaluate_array(p, x, clamp=True)
    return get_function(node.attrs["function"])(x)


def _float_node(node, args, approximants):
    k = node.kind
    if k == OpKind.Activation:
        return activation(node, args[0], approximants)
    if k == OpKind.FuzzyOr:
        return fuzzy_or(args[0], args[1])
    if k == OpKind.FuzzyNot:
        return 1.0 - args[0]
    if k == OpKind.SimilaritySearch:
        scores = similarity_scores(args[0], args[1], node.attrs.get("metric", "dot"))
        return np.array([np.argmax(scores)])
    return _linear(k, args, node.attrs)


def int8_node(node: OpNode, qargs, scales, out_scale, approximants):
    """Integer-domain evaluation of one node; returns int8 (or i32 index) array."""
    k = node.kind
    if k == OpKind.SimilaritySearch:
        q = qargs[0].astype(np.int64)
        cb = qargs[1].astype(np.int64)
        scores = similarity_scores(q, cb, node.attrs.get("metric", "dot"))
        if node.attrs.get("metric", "dot") == "dot":
            scores = _wrap32(scores)
        return np.array([np.argmax(scores)], dtype=np.int32)
    if k in (OpKind.MatMul, OpKind.Conv2D, OpKind.CircularConv, OpKind.ElemMul,
             OpKind.FuzzyAnd):
        acc = _linear(k, [a.astype(np.int64) for a in qargs], node.attrs)
        return requantize(acc, scales[0] * scales[1] / out_scale)
    xs = [a.astype(np.float64) * s for a, s in zip(qargs, scales)]
    if k == OpKind.ElemAdd:
        y = xs[0] + xs[1]
    elif k == OpKind.FuzzyOr:
        y = fuzzy_or(xs[0], xs[1])
    elif k == OpKind.FuzzyNot:
        y = 1.0 - xs[0]
    elif k == OpKind.Activation:
        y = activation(node, xs[0], approximants)
    else:
        raise AssertionError(k)
    return quantize(y, QuantParams(out_scale)).astype(np.int8)


def _as_array(meta: TensorMeta, value) -> np.ndarray:
    arr = value.array() if isinstance(value, TensorValue) else np.asarray(value)
    if arr.shape != meta.shape:
        raise ShapeError(f"{meta.id}: expected shape {list(meta.shape)}, got {list(arr.shape)}")
    return arr


def execute_reference(g: Graph, inputs: Mapping, mode: str = "f32",
                      qparams: Optional[Mapping[str, QuantParams]] = None,
                      approximants: Optional[Mapping[str, pade.PadeApproximant]] = None,
                      keep_all: bool = False) -> dict[str, TensorValue]:
    """Run ``g`` on ``inputs`` (TensorValues or arrays keyed by tensor id).

    ``mode`` is ``"f32"`` or ``"int8"``; int8 needs ``qparams`` for every
    real-valued tensor. ``approximants`` maps Activation node ids to the
    rational approximants to use instead of the exact functions.
    Returns graph outputs, or every tensor when ``keep_all``.
    """
    if mode not in ("f32", "int8"):
        raise ValueError(f"unknown mode {mode!r}")
    int8 = mode == "int8"
    qparams = qparams or {}

    def scale_of(tid):
        if tid not in qparams:
            raise MissingCalibration(f"no quantization parameters for tensor {tid!r}")
        return qparams[tid].scale

    env: dict[str, np.ndarray] = {}
    for tid in g.inputs:
        if tid not in inputs:
            raise ShapeError(f"missing graph input {tid!r}")
        meta = g.tensors[tid]
        arr = _as_array(meta, inputs[tid])
        if int8:
            env[tid] = quantize(arr.astype(np.float64), QuantParams(scale_of(tid)))
        else:
            env[tid] = arr.astype(NP_DTYPES[meta.dtype])

    for node in topo_order(g):
        out_meta = g.tensors[node.output]
        args = [env[t] for t in node.inputs]
        if int8:
            scales = [scale_of(t) for t in node.inputs]
            out_scale = 1.0 if node.kind == OpKind.SimilaritySearch else scale_of(node.output)
            env[node.output] = int8_node(node, args, scales, out_scale, approximants)
        elif out_meta.dtype == "f32" or node.kind == OpKind.SimilaritySearch:
            res = _float_node(node, [a.astype(np.float64) for a in args], approximants)
            env[node.output] = res.astype(NP_DTYPES[out_meta.dtype])
        else:
            res = _linear(node.kind, [a.astype(np.int64) for a in args], node.attrs)
            env[node.output] = res.astype(NP_DTYPES[out_meta.dtype])

    wanted = list(g.tensors) if keep_all else list(g.outputs)
    out = {}
    for tid in wanted:
        if tid not in env:
            continue
        arr = env[tid]
        meta = g.tensors[tid]
        if int8:
            meta = TensorMeta(meta.id, meta.shape, "i32" if arr.dtype == np.int32 else "i8",
                              meta.strides, meta.base_addr)
        out[tid] = TensorValue.from_array(meta, arr, arr.dtype)
    return out


def calibrate_graph(g: Graph, inputs: Mapping, approximants=None) -> dict[str, QuantParams]:
    """Per-tensor scales from one float run over calibration ``inputs``."""
    values = execute_reference(g, inputs, "f32", approximants=approximants, keep_all=True)
    skip = {n.output for n in g.nodes if n.kind == OpKind.SimilaritySearch}
    params = {}
    for tid in g.inputs:
        params[tid] = calibrate(_as_array(g.tensors[tid], inputs[tid]).ravel())
    for tid, tv in values.items():
        if tid not in skip and tid not in params:
            params[tid] = calibrate(tv)
    return params
