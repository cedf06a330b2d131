import itertools

import numpy as np
import pytest

from overmind import pade
from overmind.compiler import (CompileOptions, HwConfig, compute_windows, lower, place_memory,
                               plan_pade, tile_count)
from overmind.corpus import CORPUS, activation, circconv, corpus_graph, elemadd
from overmind.errors import ConfigError, PlacementError, TargetUnreachable, UnknownOperator
from overmind.functions import get_function
from overmind.graph import OpKind, OpNode, parse_graph
from overmind.isa import DDR, SRAM, WINDOWED_INPUTS, Opcode, validate_program
from overmind.machine import FilterState, window_accept

HW = HwConfig()


def test_elemadd_one_bundle_full_rows():
    g = parse_graph(elemadd(4, 8))
    p = lower(g, HW)
    assert len(p.bundles) == 1
    b = p.bundles[0]
    assert b.opcode == Opcode.ElemAdd
    assert [(w.row_lo, w.row_hi, w.col_lo, w.col_hi) for w in b.windows] == \
        [(r, r, 0, 7) for r in range(4)]
    assert b.row_enable_mask == 0b1111


def test_mask_bits_0_to_3():
    g = parse_graph(elemadd(4, 8))
    _, mask = compute_windows(g.nodes[0], g.tensors, HwConfig(R=32))
    assert [r for r in range(32) if mask >> r & 1] == [0, 1, 2, 3]


@pytest.mark.parametrize("base, i, want", [(0, 3, 3), (6, 5, 3), (5, 7, 4)])
def test_circconv_batch_start(base, i, want):
    g = parse_graph(circconv(8, base_b=base))
    windows, _ = compute_windows(g.nodes[0], g.tensors, HW)
    w = windows[i]
    assert w.batch_start == want == (base + i) % 8
    assert w.modulus == 8 and w.circ_offset == i and w.window_length == 8


def test_tanh_order_matches_sweep_oracle():
    spec = get_function("tanh")
    oracle = next(k for k in range(1, 9)
                  if pade.max_abs_error(pade.fit(spec, k), spec, grid_points=4001) <= 1e-3)
    p = lower(corpus_graph("activation_tanh"), HW, CompileOptions(target_mae=1e-3))
    assert p.bundles[0].pe_config.pade_order == oracle


def test_unknown_activation_function():
    with pytest.raises(UnknownOperator):
        lower(parse_graph(activation("swish")), HW)


def test_unreachable_target_names_node():
    with pytest.raises(TargetUnreachable) as ei:
        lower(corpus_graph("activation_tanh"), HW, CompileOptions(target_mae=1e-12, max_pade_k=2))
    assert ei.value.node_id == "act"


def act_node(fn="tanh"):
    return OpNode("a", OpKind.Activation, ("x",), "y", {"function": fn})


@pytest.mark.parametrize("k, cols, threads", [(3, 6, 2), (5, 10, 1), (6, 12, 1), (8, 16, 1)])
def test_plan_pade_columns_and_threads(k, cols, threads):
    approx, pe = plan_pade(act_node(), CompileOptions(fixed_k=k), HwConfig(C=16))
    assert approx.m == approx.n == k
    assert (pe.cols_used, pe.threads_per_row, pe.pade_order, pe.divider_enabled) == \
        (cols, threads, k, True)


def test_plan_pade_selected_k5_uses_ten_columns():
    approx, pe = plan_pade(act_node(), CompileOptions(target_mae=1e-3), HwConfig(C=16))
    assert approx.k == 5 and pe.cols_used == 10 and pe.threads_per_row == 1


def test_plan_pade_respects_array_width():
    with pytest.raises(ConfigError):
        plan_pade(act_node(), CompileOptions(fixed_k=5), HwConfig(C=8))
    with pytest.raises(ConfigError):
        plan_pade(act_node(), CompileOptions(), HwConfig(C=1))


def test_plan_pade_coefficients_f32_and_pole_free():
    approx, _ = plan_pade(act_node("gelu"), CompileOptions(fixed_k=4), HW)
    assert all(float(np.float32(v)) == v for v in approx.a + approx.b)
    pade.check_pole_free(approx)


def test_function_specific_target():
    loose = CompileOptions(target_mae=1e-6, function_targets={"tanh": 0.05})
    approx, _ = plan_pade(act_node(), loose, HW)
    assert approx.k == 3


# -- placement ---------------------------------------------------------------------------

def codebook_graph():
    tensors = [{"id": "cb", "shape": [16, 64]}] + \
        [{"id": f"q{i}", "shape": [64]} for i in range(3)] + \
        [{"id": f"m{i}", "shape": [1], "dtype": "i32"} for i in range(3)]
    nodes = [{"id": f"s{i}", "kind": "SimilaritySearch", "inputs": [f"q{i}", "cb"],
              "output": f"m{i}"} for i in range(3)]
    return parse_graph({"tensors": tensors, "nodes": nodes,
                        "inputs": ["cb", "q0", "q1", "q2"], "outputs": ["m0", "m1", "m2"]})


def test_reused_codebook_goes_to_sram():
    g = codebook_graph()
    cb_bytes = g.tensors["cb"].nbytes
    placement = place_memory(g, HwConfig(sram_bytes=cb_bytes))
    assert placement["cb"] == SRAM
    # the single-use queries are smaller but lose to the reused codebook
    assert all(placement[f"q{i}"] == DDR for i in range(3))


def test_large_single_use_activation_spills():
    g = parse_graph(activation(rows=512, cols=512))  # 1 MiB each
    placement = place_memory(g, HwConfig(sram_bytes=32 * 1024))
    assert placement == {"x": DDR, "y": DDR}


def test_empty_graph_placement():
    assert place_memory(parse_graph({"tensors": [], "nodes": []}), HW) == {}


def test_tensor_beyond_ddr():
    with pytest.raises(PlacementError):
        place_memory(parse_graph(activation(rows=4, cols=64)), HwConfig(ddr_bytes=512))


def test_placement_fits_sram_budget():
    for name in CORPUS:
        g = corpus_graph(name)
        placement = place_memory(g, HW)
        used = sum(g.tensors[t].nbytes for t, where in placement.items() if where == SRAM)
        assert used <= HW.sram_bytes


# -- tiling and window soundness -----------------------------------------------------------

def test_tiling_splits_rows():
    g = parse_graph(activation(rows=70, cols=4))
    hw = HwConfig(R=32)
    assert tile_count(g.nodes[0], g.tensors, hw) == 3
    p = lower(g, hw, CompileOptions(fixed_k=3))
    assert [(b.tile_index, b.tile_count, len(b.windows)) for b in p.bundles] == \
        [(0, 3, 32), (1, 3, 32), (2, 3, 6)]
    rows = [w.row_lo for b in p.bundles for w in b.windows]
    assert rows == list(range(70))
    with pytest.raises(ValueError):
        compute_windows(g.nodes[0], g.tensors, hw, tile=3)


def needed_elements(node, g, k, r):
    """Logical coordinates row ``r`` must see of windowed input ``k`` (oracle)."""
    meta = g.tensors[node.inputs[k]]
    coords = list(itertools.product(*[range(d) for d in meta.shape]))
    kind = node.kind
    if kind == OpKind.CircularConv:
        return set(coords)
    if kind == OpKind.Conv2D:
        s = node.attrs.get("stride", 1)
        kh = g.tensors[node.inputs[1]].shape[2]
        return {c for c in coords if r * s <= c[1] < r * s + kh}
    if meta.ndim == 1:
        return set(coords)
    return {c for c in coords if c[-2] == r}


def corpus_variants():
    yield from ((name, CORPUS[name]()) for name in sorted(CORPUS))
    doc = elemadd(5, 6)
    doc["tensors"][1]["strides"] = [1, 5]  # column-major second operand
    yield "elemadd_colmajor", doc
    yield "circconv_base6", circconv(8, base_b=6)
    yield "tiled_activation", activation(rows=40, cols=3)


@pytest.mark.parametrize("name, doc", list(corpus_variants()), ids=lambda v: v if isinstance(v, str) else "")
def test_windows_accept_exactly_the_needed_elements(name, doc):
    g = parse_graph(doc)
    hw = HwConfig(R=16)
    for node in g.nodes:
        op = Opcode.for_kind(node.kind)
        windowed = WINDOWED_INPUTS[op]
        for t in range(tile_count(node, g.tensors, hw)):
            windows, mask = compute_windows(node, g.tensors, hw, t)
            assert bin(mask).count("1") == len(windows)
            first = g.tensors[node.inputs[windowed[0]]].base_addr
            for k in windowed:
                meta = g.tensors[node.inputs[k]]
                for j, w in enumerate(windows):
                    r = t * hw.R + j
                    f = FilterState(w.batch_start if w.modulus else w.batch_start + meta.base_addr - first,
                                    w.row_lo, w.row_hi, w.col_lo, w.col_hi, w.circ_offset,
                                    w.modulus, meta.shape, meta.strides)
                    got = set()
                    for coord in itertools.product(*[range(d) for d in meta.shape]):
                        addr = meta.base_addr + sum(c * s for c, s in zip(coord, meta.strides))
                        if window_accept(f, addr):
                            got.add(coord)
                    assert got == needed_elements(node, g, k, r), (node.id, k, r)
                    # nothing outside the operand's own address range is accepted
                    if not w.modulus:
                        assert not window_accept(f, meta.base_addr - 1)
                        assert not window_accept(f, meta.base_addr + meta.numel)


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_lowered_programs_validate(name):
    validate_program(lower(corpus_graph(name), HW))


def test_hw_config_validation():
    with pytest.raises(ConfigError):
        HwConfig(R=0)
    with pytest.raises(ConfigError):
        HwConfig(broadcast_width=0)
    with pytest.raises(ValueError):
        CompileOptions(target_mae=0)
