"""Neuro-symbolic model IR: tensors, operator nodes, parsing and profiling.

Graph documents are JSON::

    {"tensors": [{"id", "shape": [..], "dtype", "strides"?, "base_addr"?}],
     "nodes":   [{"id", "kind", "inputs": [..], "output", "attrs": {..}}],
     "inputs":  [..], "outputs": [..]}

Per-kind operands and attributes:

=================  ===========================  ==========================
kind               inputs                       attrs
=================  ===========================  ==========================
MatMul             A[M,K] or A[K], B[K,N]       --
Conv2D             X[Cin,H,W], W[Cout,Cin,kh,kw] stride (default 1)
ElemAdd, ElemMul   x, y (same shape)            --
FuzzyAnd, FuzzyOr  x, y (same shape)            --
FuzzyNot           x                            --
Activation         x                            function (required), range
CircularConv       A[N], B[N]                   N (required)
SimilaritySearch   query[D], codebook[K,D]      metric: dot | cosine
=================  ===========================  ==========================

SimilaritySearch writes a ``[1]`` i32 tensor holding the best codebook row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

from .errors import CyclicGraph, ParseError, UnknownOperator

DTYPES = ("f32", "i8", "i32")
DTYPE_BYTES = {"f32": 4, "i8": 1, "i32": 4}


class OpKind(str, Enum):
    MatMul = "MatMul"
    Conv2D = "Conv2D"
    ElemAdd = "ElemAdd"
    ElemMul = "ElemMul"
    Activation = "Activation"
    CircularConv = "CircularConv"
    SimilaritySearch = "SimilaritySearch"
    FuzzyAnd = "FuzzyAnd"
    FuzzyOr = "FuzzyOr"
    FuzzyNot = "FuzzyNot"


ARITY = {
    OpKind.MatMul: 2, OpKind.Conv2D: 2, OpKind.ElemAdd: 2, OpKind.ElemMul: 2,
    OpKind.Activation: 1, OpKind.CircularConv: 2, OpKind.SimilaritySearch: 2,
    OpKind.FuzzyAnd: 2, OpKind.FuzzyOr: 2, OpKind.FuzzyNot: 1,
}
ELEMENTWISE = {OpKind.ElemAdd, OpKind.ElemMul, OpKind.FuzzyAnd, OpKind.FuzzyOr,
               OpKind.FuzzyNot, OpKind.Activation}
# kinds whose result may be held in an integer tensor outside int8 mode
INTEGER_CAPABLE = {OpKind.MatMul, OpKind.Conv2D, OpKind.ElemAdd, OpKind.ElemMul,
                   OpKind.CircularConv}


def dense_strides(shape) -> tuple[int, ...]:
    strides = []
    acc = 1
    for d in reversed(shape):
        strides.append(acc)
        acc *= d
    return tuple(reversed(strides))


@dataclass(frozen=True)
class TensorMeta:
    id: str
    shape: tuple[int, ...]
    dtype: str = "f32"
    strides: Optional[tuple[int, ...]] = None
    base_addr: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        strides = dense_strides(self.shape) if self.strides is None else self.strides
        object.__setattr__(self, "strides", tuple(int(s) for s in strides))

    @property
    def numel(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return self.numel * DTYPE_BYTES[self.dtype]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def layout_problem(self) -> Optional[str]:
        """Describe why the layout is invalid, or None.

        Payloads are flat arrays of exactly ``numel`` elements, so strides must
        be a permutation of a dense layout (no gaps, no overlap).
        """
        if not self.shape:
            return "shape must have at least one dimension"
        if any(d < 1 for d in self.shape):
            return "all dims must be >= 1"
        if len(self.strides) != len(self.shape):
            return "strides length must match shape"
        if self.base_addr < 0:
            return "base_addr must be >= 0"
        expect = 1
        for s, d in sorted(zip(self.strides, self.shape)):
            if d == 1:
                continue
            if s != expect:
                return f"strides {list(self.strides)} are not a non-overlapping dense layout"
            expect *= d
        return None


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: OpKind
    inputs: tuple[str, ...]
    output: str
    attrs: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Graph:
    tensors: Mapping[str, TensorMeta]
    nodes: tuple[OpNode, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]

    def node(self, node_id: str) -> OpNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def producers(self) -> dict[str, OpNode]:
        return {n.output: n for n in self.nodes}

    def consumers(self) -> dict[str, list[OpNode]]:
        out: dict[str, list[OpNode]] = {tid: [] for tid in self.tensors}
        for n in self.nodes:
            for tid in dict.fromkeys(n.inputs):
                out[tid].append(n)
        return out


# -- parsing -------------------------------------------------------------------

def _require(obj, key, path, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}.{key}" if path else key, "missing required field")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"{path}.{key}" if path else key,
                         f"expected {getattr(kind, '__name__', kind)}")
    return val


def _int_list(val, path):
    if not isinstance(val, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                            for v in val):
        raise ParseError(path, "expected a list of integers")
    return tuple(val)


def parse_graph(text) -> Graph:
    """Parse and validate a graph document (JSON text or already-loaded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError("$", f"invalid JSON: {e}") from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ParseError("$", "document must be an object")

    tensors: dict[str, TensorMeta] = {}
    for i, t in enumerate(_require(doc, "tensors", "", list)):
        path = f"tensors[{i}]"
        tid = _require(t, "id", path, str)
        if tid in tensors:
            raise ParseError(f"{path}.id", f"duplicate tensor id {tid!r}")
        shape = _int_list(_require(t, "shape", path), f"{path}.shape")
        dtype = t.get("dtype", "f32")
        if dtype not in DTYPES:
            raise ParseError(f"{path}.dtype", f"unknown dtype {dtype!r}")
        strides = t.get("strides")
        if strides is not None:
            strides = _int_list(strides, f"{path}.strides")
        base = t.get("base_addr", 0)
        if not isinstance(base, int) or isinstance(base, bool):
            raise ParseError(f"{path}.base_addr", "expected an integer")
        meta = TensorMeta(tid, shape, dtype, strides, base)
        problem = meta.layout_problem()
        if problem:
            raise ParseError(path, problem)
        tensors[tid] = meta

    nodes = []
    seen_ids = set()
    for i, nd in enumerate(_require(doc, "nodes", "", list)):
        path = f"nodes[{i}]"
        nid = _require(nd, "id", path, str)
        if nid in seen_ids:
            raise ParseError(f"{path}.id", f"duplicate node id {nid!r}")
        seen_ids.add(nid)
        kind_name = _require(nd, "kind", path, str)
        try:
            kind = OpKind(kind_name)
        except ValueError:
            raise UnknownOperator(f"{path}.kind: unknown operator {kind_name!r}") from None
        inputs = _require(nd, "inputs", path, list)
        for j, tid in enumerate(inputs):
            if not isinstance(tid, str) or tid not in tensors:
                raise ParseError(f"{path}.inputs[{j}]", f"undeclared tensor {tid!r}")
        out = _require(nd, "output", path, str)
        if out not in tensors:
            raise ParseError(f"{path}.output", f"undeclared tensor {out!r}")
        attrs = nd.get("attrs", {})
        if not isinstance(attrs, dict):
            raise ParseError(f"{path}.attrs", "expected an object")
        nodes.append(OpNode(nid, kind, tuple(inputs), out, dict(attrs)))

    g_inputs = tuple(doc.get("inputs", []))
    g_outputs = tuple(doc.get("outputs", []))
    for name, ids in (("inputs", g_inputs), ("outputs", g_outputs)):
        for j, tid in enumerate(ids):
            if tid not in tensors:
                raise ParseError(f"{name}[{j}]", f"undeclared tensor {tid!r}")

    g = Graph(tensors, tuple(nodes), g_inputs, g_outputs)
    validate(g)
    return g


def validate(g: Graph) -> None:
    """Check structural and per-kind shape invariants; raise ParseError on violation."""
    producers: dict[str, int] = {}
    for i, n in enumerate(g.nodes):
        if n.output in producers:
            raise ParseError(f"nodes[{i}].output", f"tensor {n.output!r} has two producers")
        if n.output in g.inputs:
            raise ParseError(f"nodes[{i}].output", f"graph input {n.output!r} is overwritten")
        producers[n.output] = i
    for i, n in enumerate(g.nodes):
        for j, tid in enumerate(n.inputs):
            if tid not in producers and tid not in g.inputs:
                raise ParseError(f"nodes[{i}].inputs[{j}]",
                                 f"tensor {tid!r} is neither a graph input nor produced")
        _check_node(g, n, f"nodes[{i}]")
    topo_order(g)


def _check_node(g: Graph, n: OpNode, path: str) -> None:
    if len(n.inputs) != ARITY[n.kind]:
        raise ParseError(f"{path}.inputs", f"{n.kind.value} takes {ARITY[n.kind]} inputs, "
                                           f"got {len(n.inputs)}")
    ins = [g.tensors[t] for t in n.inputs]
    out = g.tensors[n.output]

    def fail(msg, where="output"):
        raise ParseError(f"{path}.{where}", msg)

    k = n.kind
    if k in ELEMENTWISE:
        for j, t in enumerate(ins):
            if t.shape != out.shape:
                fail(f"shape {list(t.shape)} differs from output {list(out.shape)}",
                     f"inputs[{j}]")
        if k == OpKind.Activation:
            fn = n.attrs.get("function")
            if not isinstance(fn, str):
                fail("Activation requires a string attrs.function", "attrs.function")
            rng = n.attrs.get("range")
            if rng is not None and not (isinstance(rng, list) and len(rng) == 2
                                        and rng[0] < rng[1]):
                fail("range must be [lo, hi] with lo < hi", "attrs.range")
    elif k == OpKind.MatMul:
        a, b = ins
        if a.ndim not in (1, 2) or b.ndim != 2:
            fail("MatMul expects A of rank 1 or 2 and B of rank 2", "inputs")
        if a.shape[-1] != b.shape[0]:
            fail(f"inner dims {a.shape[-1]} and {b.shape[0]} differ", "inputs[1]")
        want = a.shape[:-1] + (b.shape[1],)
        if out.shape != want:
            fail(f"expected output shape {list(want)}")
    elif k == OpKind.Conv2D:
        x, w = ins
        if x.ndim != 3 or w.ndim != 4:
            fail("Conv2D expects X[Cin,H,W] and W[Cout,Cin,kh,kw]", "inputs")
        if x.shape[0] != w.shape[1]:
            fail("input channel mismatch", "inputs[1]")
        s = n.attrs.get("stride", 1)
        if not isinstance(s, int) or s < 1:
            fail("stride must be a positive integer", "attrs.stride")
        ho = (x.shape[1] - w.shape[2]) // s + 1
        wo = (x.shape[2] - w.shape[3]) // s + 1
        if ho < 1 or wo < 1:
            fail("kernel larger than input", "inputs[1]")
        if out.shape != (w.shape[0], ho, wo):
            fail(f"expected output shape {[w.shape[0], ho, wo]}")
    elif k == OpKind.CircularConv:
        if "N" not in n.attrs:
            fail("CircularConv requires attrs.N", "attrs.N")
        N = n.attrs["N"]
        for j, t in enumerate(ins):
            if t.shape != (N,):
                fail(f"operand length {list(t.shape)} does not match N={N}", f"inputs[{j}]")
        if out.shape != (N,):
            fail(f"expected output shape [{N}]")
    elif k == OpKind.SimilaritySearch:
        q, cb = ins
        if q.ndim != 1 or cb.ndim != 2:
            fail("SimilaritySearch expects query[D] and codebook[K,D]", "inputs")
        if cb.shape[1] != q.shape[0]:
            fail(f"codebook row length {cb.shape[1]} != query length {q.shape[0]}",
                 "inputs[1]")
        if out.shape != (1,) or out.dtype != "i32":
            fail("SimilaritySearch output must be an i32 tensor of shape [1]")
        if n.attrs.get("metric", "dot") not in ("dot", "cosine"):
            fail("metric must be 'dot' or 'cosine'", "attrs.metric")
    if k != OpKind.SimilaritySearch and out.dtype != "f32":
        if k not in INTEGER_CAPABLE:
            fail(f"{k.value} must produce an f32 tensor")
        if any(t.dtype == "f32" for t in ins):
            fail("integer outputs require integer inputs")


def topo_order(g: Graph) -> list[OpNode]:
    """Depth-first post-order; producers are visited in input declaration order."""
    producers = g.producers()
    state: dict[str, int] = {}  # 1 = on stack, 2 = done
    order: list[OpNode] = []
    for root in g.nodes:
        if state.get(root.id):
            continue
        stack = [(root, iter(root.inputs))]
        state[root.id] = 1
        while stack:
            node, it = stack[-1]
            for tid in it:
                dep = producers.get(tid)
                if dep is None:
                    continue
                s = state.get(dep.id)
                if s == 1:
                    raise CyclicGraph(node.id, dep.id)
                if s is None:
                    state[dep.id] = 1
                    stack.append((dep, iter(dep.inputs)))
                    break
            else:
                stack.pop()
                state[node.id] = 2
                order.append(node)
    return order


def to_document(g: Graph) -> dict:
    tensors = []
    for t in g.tensors.values():
        entry = {"id": t.id, "shape": list(t.shape), "dtype": t.dtype}
        if t.strides != dense_strides(t.shape):
            entry["strides"] = list(t.strides)
        if t.base_addr:
            entry["base_addr"] = t.base_addr
        tensors.append(entry)
    nodes = [{"id": n.id, "kind": n.kind.value, "inputs": list(n.inputs),
              "output": n.output, "attrs": dict(n.attrs)} for n in g.nodes]
    return {"tensors": tensors, "nodes": nodes, "inputs": list(g.inputs),
            "outputs": list(g.outputs)}


def serialize_graph(g: Graph) -> str:
    return json.dumps(to_document(g), indent=2)


# -- profiling -----------------------------------------------------------------

LINEAR = {OpKind.MatMul, OpKind.Conv2D, OpKind.ElemAdd, OpKind.ElemMul,
          OpKind.CircularConv, OpKind.SimilaritySearch}
NONLINEAR = {OpKind.Activation, OpKind.FuzzyAnd, OpKind.FuzzyOr, OpKind.FuzzyNot}
NEURAL = {OpKind.MatMul, OpKind.Conv2D, OpKind.Activation}
SYMBOLIC = {OpKind.CircularConv, OpKind.SimilaritySearch, OpKind.FuzzyAnd, OpKind.FuzzyOr,
            OpKind.FuzzyNot, OpKind.ElemAdd, OpKind.ElemMul}


def op_count(g: Graph, n: OpNode) -> int:
    """Static scalar-op estimate for one node.

    MatMul M*N*K MACs, Conv2D Cout*Ho*Wo*Cin*kh*kw MACs, CircularConv N^2 MACs,
    SimilaritySearch K*D MACs, elementwise/fuzzy/activation one op per element.
    """
    ins = [g.tensors[t] for t in n.inputs]
    out = g.tensors[n.output]
    if n.kind == OpKind.MatMul:
        return out.numel * ins[0].shape[-1]
    if n.kind == OpKind.Conv2D:
        w = ins[1].shape
        return out.numel * w[1] * w[2] * w[3]
    if n.kind == OpKind.CircularConv:
        return out.numel ** 2
    if n.kind == OpKind.SimilaritySearch:
        return ins[1].numel
    return out.numel


@dataclass(frozen=True)
class WorkloadProfile:
    linear_op_count: int = 0
    nonlinear_op_count: int = 0
    neural_op_count: int = 0
    symbolic_op_count: int = 0

    @staticmethod
    def _pct(part, whole):
        return 100.0 * part / whole if whole else 0.0

    @property
    def linear_pct(self):
        return self._pct(self.linear_op_count, self.linear_op_count + self.nonlinear_op_count)

    @property
    def nonlinear_pct(self):
        return self._pct(self.nonlinear_op_count, self.linear_op_count + self.nonlinear_op_count)

    @property
    def neural_pct(self):
        return self._pct(self.neural_op_count, self.neural_op_count + self.symbolic_op_count)

    @property
    def symbolic_pct(self):
        return self._pct(self.symbolic_op_count, self.neural_op_count + self.symbolic_op_count)

    def __add__(self, other: "WorkloadProfile") -> "WorkloadProfile":
        return WorkloadProfile(self.linear_op_count + other.linear_op_count,
                               self.nonlinear_op_count + other.nonlinear_op_count,
                               self.neural_op_count + other.neural_op_count,
                               self.symbolic_op_count + other.symbolic_op_count)

    def to_dict(self) -> dict:
        return {"linear_op_count": self.linear_op_count,
                "nonlinear_op_count": self.nonlinear_op_count,
                "neural_op_count": self.neural_op_count,
                "symbolic_op_count": self.symbolic_op_count,
                "linear_pct": self.linear_pct, "nonlinear_pct": self.nonlinear_pct,
                "neural_pct": self.neural_pct, "symbolic_pct": self.symbolic_pct}


def profile(g: Graph, nodes: Optional[Iterable[OpNode]] = None) -> WorkloadProfile:
    counts = dict(lin=0, nonlin=0, neural=0, sym=0)
    for n in (g.nodes if nodes is None else nodes):
        c = op_count(g, n)
        counts["lin" if n.kind in LINEAR else "nonlin"] += c
        counts["neural" if n.kind in NEURAL else "sym"] += c
    return WorkloadProfile(counts["lin"], counts["nonlin"], counts["neural"], counts["sym"])
