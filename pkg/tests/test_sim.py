import dataclasses

import numpy as np
import pytest

from overmind.compiler import CompileOptions, HwConfig, approximants, lower
from overmind.corpus import CORPUS, activation, circconv, corpus_graph, elemadd, random_inputs
from overmind.errors import ConfigError, ShapeError, SimulationFault
from overmind.graph import parse_graph
from overmind.isa import AddressWindowConfig, Opcode, Program
from overmind.machine import (BASELINE, BYPASS, OFFSET, SHIFT, STALL_CAUSES, FilterState,
                              SimConfig, run, window_accept)
from overmind.refexec import calibrate_graph, execute_reference

HW = HwConfig()
BASE = SimConfig.baseline(HW)


def wrap_filter(bs, length, n):
    return FilterState(bs, 0, 0, 0, length - 1, 0, n, (n,), (1,))


def test_wrap_window_accepts_enumerated_set():
    f = wrap_filter(6, 5, 8)
    assert {a for a in range(8) if window_accept(f, a)} == {6, 7, 0, 1, 2}
    assert window_accept(f, 1) and not window_accept(f, 3)


def test_box_window_accept_and_reject():
    f = FilterState(100, 1, 2, 0, 3, shape=(4, 8), strides=(8, 1))
    assert window_accept(f, 100 + 8 * 1 + 2)
    assert not window_accept(f, 100 + 8 * 1 + 5)   # col above col_hi
    assert not window_accept(f, 100 + 8 * 3 + 0)   # row above row_hi
    assert not window_accept(f, 99) and not window_accept(f, 132)


def simulate(name_or_doc, cfg=SimConfig(), opts=CompileOptions(), seed=0, int8=False, **inkw):
    g = corpus_graph(name_or_doc) if isinstance(name_or_doc, str) else parse_graph(name_or_doc)
    p = lower(g, cfg.hw, opts)
    ins = random_inputs(g, seed, **inkw)
    qp = calibrate_graph(g, ins, approximants(p)) if int8 else None
    outs, rep = run(p, ins, cfg, qp)
    return g, p, ins, qp, outs, rep


def test_empty_program():
    outs, rep = run(Program(HW.R, HW.C, HW.sram_bytes), {})
    assert outs == {} and rep.total_cycles == 0 and rep.utilization == 0.0


@pytest.mark.parametrize("name", sorted(CORPUS))
@pytest.mark.parametrize("cfg", [SimConfig(), SimConfig(circ_impl=SHIFT), BASE],
                         ids=["bypass", "shift", "baseline"])
def test_f32_outputs_bit_identical_to_reference(name, cfg):
    g, p, ins, _, outs, _ = simulate(name, cfg)
    ref = execute_reference(g, ins, approximants=approximants(p))
    assert set(outs) == set(ref)
    for tid in ref:
        assert outs[tid] == ref[tid], tid


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_int8_outputs_bit_identical_to_reference(name):
    g, p, ins, qp, outs, _ = simulate(name, int8=True)
    ref = execute_reference(g, ins, "int8", qparams=qp, approximants=approximants(p))
    for tid in ref:
        assert outs[tid] == ref[tid], tid


def test_tiled_bundles_match_reference():
    doc = activation(rows=70, cols=5)
    hw = HwConfig(R=16)
    g, p, ins, _, outs, rep = simulate(doc, SimConfig(hw=hw), CompileOptions(fixed_k=3))
    assert len(p.bundles) == 5 and len(rep.bundles) == 5
    ref = execute_reference(g, ins, approximants=approximants(p))
    assert outs["y"] == ref["y"]


def test_tiled_similarity_keeps_running_argmax():
    tensors = [{"id": "q", "shape": [8]}, {"id": "cb", "shape": [40, 8]},
               {"id": "m", "shape": [1], "dtype": "i32"}]
    doc = {"tensors": tensors, "inputs": ["q", "cb"], "outputs": ["m"],
           "nodes": [{"id": "s", "kind": "SimilaritySearch", "inputs": ["q", "cb"], "output": "m"}]}
    for seed in range(5):
        g, p, ins, _, outs, _ = simulate(doc, SimConfig(hw=HwConfig(R=16)), seed=seed)
        want = np.argmax(ins["cb"].astype(np.float64) @ ins["q"].astype(np.float64))
        assert outs["m"].array()[0] == want


def test_pade_ratio_on_1024_elements():
    cycles = {}
    for k in (3, 6):
        *_, rep = simulate(activation(rows=8, cols=128), opts=CompileOptions(fixed_k=k))
        cycles[k] = rep.total_cycles
    assert 0.4 <= cycles[3] / cycles[6] <= 0.6


def test_shift_register_stall_is_n_times_n_minus_1():
    n = 64
    doc = circconv(n, "f32")
    *_, off = simulate(doc, SimConfig(circ_impl=OFFSET))
    *_, sh = simulate(doc, SimConfig(circ_impl=SHIFT))
    assert sh.stall_cycles["shift_propagation"] == n * (n - 1)
    assert off.stall_cycles["shift_propagation"] == 0
    assert sh.total_cycles - off.total_cycles >= n * (n - 1)


def test_determinism():
    a = simulate("alternating6", BASE)[-1]
    b = simulate("alternating6", BASE)[-1]
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("name", sorted(CORPUS))
@pytest.mark.parametrize("cfg", [SimConfig(), BASE], ids=["bypass", "baseline"])
def test_accounting_closes(name, cfg):
    *_, rep = simulate(name, cfg)
    assert 0.0 <= rep.utilization <= 1.0
    assert rep.total_cycles == sum(b.total_cycles for b in rep.bundles)
    for b in rep.bundles:
        assert b.total_cycles == b.busy_cycles + sum(b.stalls.values()) + b.drain_cycles
        assert b.busy_cycles >= max(b.stream_cycles, b.compute_cycles)
    for cause in STALL_CAUSES:
        assert rep.stall_cycles[cause] == sum(b.stalls[cause] for b in rep.bundles)
    starts = [b.start_cycle for b in rep.bundles]
    assert starts == [sum(b.total_cycles for b in rep.bundles[:i]) for i in range(len(starts))]


def test_l2_stalls_only_in_baseline():
    *_, byp = simulate("alternating6")
    *_, base = simulate("alternating6", BASE)
    assert byp.stall_cycles["l2_transfer"] == 0 and base.stall_cycles["l2_transfer"] > 0
    assert byp.total_cycles < base.total_cycles


def test_ddr_resident_operands_stall():
    cfg = SimConfig(hw=HwConfig(sram_bytes=0))
    g, p, ins, _, outs, rep = simulate("elemadd", cfg)
    assert rep.stall_cycles["ddr_wait"] >= 3 * cfg.hw.ddr_latency
    assert rep.ddr_elements_read == 64 and rep.sram_elements_read == 0
    assert outs["z"] == execute_reference(g, ins)["z"]


def test_divider_depth_override_changes_drain():
    *_, a = simulate("activation_tanh")
    *_, b = simulate("activation_tanh", SimConfig(divider_pipeline_depth=20))
    assert b.total_cycles - a.total_cycles == 20 - HW.divider_latency


def test_header_mismatch():
    p = lower(corpus_graph("elemadd"), HW)
    with pytest.raises(ConfigError):
        run(p, {}, SimConfig(hw=HwConfig(R=16)))


def test_missing_input():
    p = lower(corpus_graph("elemadd"), HW)
    with pytest.raises(ShapeError):
        run(p, {"x": np.zeros((4, 8))})


def test_exact_activation_opcode_not_executable():
    g = corpus_graph("activation_tanh")
    p = lower(g, HW)
    b = p.bundles[0]
    exact = dataclasses.replace(b, opcode=Opcode.Activation, pade=None,
                                pe_config=dataclasses.replace(b.pe_config, pade_order=0))
    with pytest.raises(ConfigError):
        run(dataclasses.replace(p, bundles=(exact,)), random_inputs(g))


def test_window_beyond_extent_faults():
    g = corpus_graph("elemadd")
    p = lower(g, HW)
    b = p.bundles[0]
    wide = tuple(dataclasses.replace(w, col_hi=8) for w in b.windows)
    with pytest.raises(SimulationFault):
        run(dataclasses.replace(p, bundles=(dataclasses.replace(b, windows=wide),)),
            random_inputs(g))


def test_window_accepting_nothing_faults():
    g = corpus_graph("elemadd")
    p = lower(g, HW)
    b = p.bundles[0]
    shifted = (AddressWindowConfig(10**6, 0, 0, 0, 7),) + b.windows[1:]
    with pytest.raises(SimulationFault):
        run(dataclasses.replace(p, bundles=(dataclasses.replace(b, windows=shifted),)),
            random_inputs(g))


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(mode=BASELINE)
    with pytest.raises(ConfigError):
        SimConfig(l2_block_elems=4)
    with pytest.raises(ConfigError):
        SimConfig(circ_impl="ring")
    assert SimConfig.baseline().mode == BASELINE and SimConfig().mode == BYPASS


def test_trace_and_json():
    *_, rep = simulate("ltn_like", SimConfig(trace=True))
    csv = rep.trace_csv().splitlines()
    assert csv[0] == "cycle,unit,event" and len(csv) > 1
    cycles = [int(line.split(",")[0]) for line in csv[1:]]
    assert cycles == sorted(cycles) and cycles[-1] == rep.total_cycles
    assert "trace" not in rep.to_json()
