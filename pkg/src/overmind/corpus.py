"""Built-in workload graphs used by the tests, the sweeps and the CLI.

``python3 -m overmind.corpus DIR`` writes every graph document to ``DIR``.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .graph import Graph, parse_graph, serialize_graph


class _Builder:
    def __init__(self):
        self.tensors: list[dict] = []
        self.nodes: list[dict] = []
        self.inputs: list[str] = []
        self.next_addr = 0

    def tensor(self, tid, shape, dtype="f32", is_input=False, strides=None, base=None):
        doc = {"id": tid, "shape": list(shape), "dtype": dtype}
        if strides is not None:
            doc["strides"] = list(strides)
        doc["base_addr"] = self.next_addr if base is None else base
        self.next_addr = max(self.next_addr, doc["base_addr"]) + math.prod(shape)
        self.tensors.append(doc)
        if is_input:
            self.inputs.append(tid)
        return tid

    def node(self, nid, kind, inputs, output, **attrs):
        self.nodes.append({"id": nid, "kind": kind, "inputs": list(inputs), "output": output,
                           "attrs": attrs})
        return output

    def doc(self, outputs) -> dict:
        return {"tensors": self.tensors, "nodes": self.nodes, "inputs": self.inputs,
                "outputs": list(outputs)}


def elemadd(rows: int = 4, cols: int = 8) -> dict:
    b = _Builder()
    b.tensor("x", [rows, cols], is_input=True)
    b.tensor("y", [rows, cols], is_input=True)
    b.tensor("z", [rows, cols])
    b.node("add", "ElemAdd", ["x", "y"], "z")
    return b.doc(["z"])


def activation(function: str = "tanh", rows: int = 16, cols: int = 256,
               rng: Optional[tuple[float, float]] = None) -> dict:
    b = _Builder()
    b.tensor("x", [rows, cols], is_input=True)
    b.tensor("y", [rows, cols])
    attrs = {"function": function}
    if rng is not None:
        attrs["range"] = list(rng)
    b.node("act", "Activation", ["x"], "y", **attrs)
    return b.doc(["y"])


def alternating6(dim: int = 64, symbols: int = 16) -> dict:
    """Six layers alternating neural and symbolic kinds."""
    b = _Builder()
    b.tensor("x", [dim], is_input=True)
    b.tensor("w1", [dim, dim], is_input=True)
    b.tensor("key", [dim], is_input=True)
    b.tensor("gate", [dim], is_input=True)
    b.tensor("w2", [dim, dim], is_input=True)
    b.tensor("codebook", [symbols, dim], is_input=True)
    for t in ("h1", "h2", "h3", "h4", "h5"):
        b.tensor(t, [dim])
    b.tensor("match", [1], "i32")
    b.node("embed", "MatMul", ["x", "w1"], "h1")
    b.node("bind", "CircularConv", ["key", "h1"], "h2", N=dim)
    b.node("squash", "Activation", ["h2"], "h3", function="tanh", range=[-8.0, 8.0])
    b.node("rule", "FuzzyAnd", ["h3", "gate"], "h4")
    b.node("project", "MatMul", ["h4", "w2"], "h5")
    b.node("cleanup", "SimilaritySearch", ["h5", "codebook"], "match", metric="dot")
    return b.doc(["match"])


def conv(cin: int = 2, cout: int = 4, size: int = 10, k: int = 3) -> dict:
    b = _Builder()
    out = size - k + 1
    b.tensor("img", [cin, size, size], is_input=True)
    b.tensor("filt", [cout, cin, k, k], is_input=True)
    b.tensor("gate", [cout, out, out], is_input=True)
    b.tensor("feat", [cout, out, out])
    b.tensor("prob", [cout, out, out])
    b.tensor("out", [cout, out, out])
    b.node("conv", "Conv2D", ["img", "filt"], "feat", stride=1)
    b.node("sig", "Activation", ["feat"], "prob", function="sigmoid")
    b.node("mask", "ElemMul", ["prob", "gate"], "out")
    return b.doc(["out"])


def nvsa_like(dim: int = 256, feat: int = 16, symbols: int = 64) -> dict:
    """Small neural front end feeding vector-symbolic binding and cleanup."""
    b = _Builder()
    b.tensor("pixels", [feat], is_input=True)
    b.tensor("proj", [feat, dim], is_input=True)
    b.tensor("role", [dim], is_input=True)
    b.tensor("codebook", [symbols, dim], is_input=True)
    b.tensor("filler", [dim])
    b.tensor("bound", [dim])
    b.tensor("match", [1], "i32")
    b.node("encode", "MatMul", ["pixels", "proj"], "filler")
    b.node("bind", "CircularConv", ["role", "filler"], "bound", N=dim)
    b.node("cleanup", "SimilaritySearch", ["bound", "codebook"], "match")
    return b.doc(["match"])


def ltn_like(batch: int = 8, feat: int = 16, preds: int = 8) -> dict:
    """Predicate grounding followed by fuzzy-logic connectives."""
    b = _Builder()
    b.tensor("x", [batch, feat], is_input=True)
    b.tensor("w", [feat, preds], is_input=True)
    b.tensor("p", [batch, preds], is_input=True)
    b.tensor("q", [batch, preds], is_input=True)
    for t in ("logit", "truth", "both", "either", "neither"):
        b.tensor(t, [batch, preds])
    b.node("ground", "MatMul", ["x", "w"], "logit")
    b.node("pred", "Activation", ["logit"], "truth", function="sigmoid")
    b.node("and", "FuzzyAnd", ["truth", "p"], "both")
    b.node("or", "FuzzyOr", ["both", "q"], "either")
    b.node("not", "FuzzyNot", ["either"], "neither")
    return b.doc(["neither"])


def circconv(n: int = 8, dtype: str = "i32", base_b: Optional[int] = None) -> dict:
    b = _Builder()
    b.tensor("a", [n], dtype, is_input=True)
    b.tensor("b", [n], dtype, is_input=True, base=base_b)
    b.tensor("c", [n], dtype)
    b.node("cc", "CircularConv", ["a", "b"], "c", N=n)
    return b.doc(["c"])


CORPUS: dict[str, Callable[[], dict]] = {
    "elemadd": elemadd,
    "activation_tanh": activation,
    "alternating6": alternating6,
    "conv": conv,
    "nvsa_like": nvsa_like,
    "ltn_like": ltn_like,
    "circconv8": lambda: circconv(8),
}


def corpus_graph(name: str) -> Graph:
    return parse_graph(CORPUS[name]())


def random_inputs(g: Graph, seed: int = 0, low: float = -1.0, high: float = 1.0,
                  int_bound: int = 50) -> dict[str, np.ndarray]:
    """Uniform inputs per graph input: floats in [low, high), ints in [-int_bound, int_bound]."""
    rng = np.random.default_rng(seed)
    out = {}
    for tid in g.inputs:
        meta = g.tensors[tid]
        if meta.dtype == "f32":
            out[tid] = rng.uniform(low, high, meta.shape).astype(np.float32)
        else:
            val = rng.integers(-int_bound, int_bound + 1, meta.shape)
            out[tid] = val.astype(np.int8 if meta.dtype == "i8" else np.int32)
    return out


def write_corpus(directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, build in CORPUS.items():
        path = d / f"{name}.json"
        path.write_text(serialize_graph(parse_graph(build())))
        paths.append(path)
    return paths


if __name__ == "__main__":
    for p in write_corpus(sys.argv[1] if len(sys.argv) > 1 else "corpus"):
        print(p)
