import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from overmind import pade
from overmind.cli import main
from overmind.corpus import write_corpus
from overmind.functions import get_function
from overmind.isa import load_program
from overmind.tensorio import read_tensor, write_tensor

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(d)
    return d


def compile_to(corpus_dir, tmp_path, name, *extra):
    out = tmp_path / f"{name}.omp"
    assert main(["compile", str(corpus_dir / f"{name}.json"), "-o", str(out), *extra]) == 0
    return out


def test_fit_matches_library(tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert main(["fit", "--fn", "tanh", "--k", "3", "--range", "-8:8", "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    lib = pade.fit(get_function("tanh"), 3, (-8.0, 8.0))
    assert (doc["m"], doc["n"]) == (3, 3)
    assert doc["a"] == list(lib.a) and doc["b"] == list(lib.b)
    assert doc["mae"] == pade.max_abs_error(lib, get_function("tanh"), (-8.0, 8.0))
    assert "MAE" in capsys.readouterr().out


def test_fit_exp_taylor(capsys):
    assert main(["fit", "--fn", "exp", "--k", "1", "--range", "-1:1", "--method", "taylor"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["a"] == [1.0, 0.5] and doc["b"] == [-0.5]


@pytest.mark.parametrize("argv", [["fit", "--fn", "bogus", "--k", "3"],
                                  ["fit", "--fn", "tanh", "--k", "0"],
                                  ["fit", "--fn", "tanh", "--k", "3", "--range", "8:-8"],
                                  ["compile"], ["frobnicate"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_fit_error_exit_1(capsys):
    assert main(["fit", "--fn", "exp", "--k", "8", "--range", "-4:4"]) == 1
    assert "DegenerateFit" in capsys.readouterr().err


def test_compile_golden_disasm(corpus_dir, tmp_path, capsys):
    out = tmp_path / "e.omp"
    assert main(["compile", str(corpus_dir / "elemadd.json"), "-o", str(out), "--disasm"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "elemadd.disasm").read_text()
    assert len(load_program(out).bundles) == 1
    assert main(["disasm", str(out)]) == 0
    assert capsys.readouterr().out == (GOLDEN / "elemadd.disasm").read_text()


def test_compile_unreachable_target(corpus_dir, tmp_path, capsys):
    rc = main(["compile", str(corpus_dir / "activation_tanh.json"), "-o", str(tmp_path / "a.omp"),
               "--target-mae", "1e-12", "--max-k", "2"])
    assert rc == 1 and "TargetUnreachable" in capsys.readouterr().err


def test_compile_bad_graph_path(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tensors": [{"id": "x", "shape": [4]}],
                               "nodes": [{"id": "n", "kind": "FuzzyNot", "inputs": ["t9"],
                                          "output": "x"}]}))
    assert main(["compile", str(bad)]) == 1
    assert "nodes[0].inputs[0]" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["compile", str(tmp_path / "nope.json")]) == 2
    assert main(["run", str(tmp_path / "nope.omp")]) == 2
    assert main(["profile", str(tmp_path / "nope.json")]) == 2


def test_run_with_input_files(corpus_dir, tmp_path):
    prog = compile_to(corpus_dir, tmp_path, "elemadd")
    ind = tmp_path / "in"
    ind.mkdir()
    x = np.arange(32, dtype=np.float32).reshape(4, 8)
    write_tensor(ind / "x.omt", x, "f32")
    write_tensor(ind / "y.omt", 2 * x, "f32")
    rep = tmp_path / "r.json"
    outd = tmp_path / "out"
    trace = tmp_path / "t.csv"
    assert main(["run", str(prog), "--inputs", str(ind), "--out-dir", str(outd),
                 "--report", str(rep), "--trace", str(trace), "--no-timestamp"]) == 0
    dtype, z = read_tensor(outd / "z.omt")
    assert dtype == "f32" and np.array_equal(z, 3 * x)
    doc = json.loads(rep.read_text())
    assert "generated_at" not in doc and doc["report"]["total_cycles"] > 0
    assert trace.read_text().startswith("cycle,unit,event\n")


def test_run_missing_input_tensor(corpus_dir, tmp_path):
    prog = compile_to(corpus_dir, tmp_path, "elemadd")
    (tmp_path / "empty").mkdir()
    assert main(["run", str(prog), "--inputs", str(tmp_path / "empty")]) == 2


def test_run_int8_and_header_mismatch(corpus_dir, tmp_path, capsys):
    prog = compile_to(corpus_dir, tmp_path, "ltn_like")
    assert main(["run", str(prog), "--precision", "int8", "--report", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["precision"] == "int8"
    assert main(["run", str(prog), "--hw", "16,16,32768"]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_run_is_reproducible(corpus_dir, tmp_path, capsys):
    prog = compile_to(corpus_dir, tmp_path, "conv")
    capsys.readouterr()
    outs = []
    for _ in range(2):
        assert main(["run", str(prog), "--no-timestamp", "--mode", "baseline"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_sweep_ratio_about_half(corpus_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(corpus_dir / "activation_tanh.json"), "--k-range", "3:6",
                 "-o", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [int(r["pade_k"]) for r in rows] == [3, 4, 5, 6]
    cycles = {int(r["pade_k"]): int(r["total_cycles"]) for r in rows}
    assert 0.4 <= cycles[3] / cycles[6] <= 0.6
    maes = [float(r["mae_tanh"]) for r in rows]
    assert maes == sorted(maes, reverse=True)


def test_sweep_scaling(corpus_dir, tmp_path):
    out = tmp_path / "scaling.csv"
    assert main(["sweep", str(corpus_dir / "activation_tanh.json"), "--scaling", "256,512",
                 "--fixed-k", "3", "-o", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [(r["pe_count"], r["mode"]) for r in rows] == [
        ("256", "bypass"), ("256", "baseline"), ("512", "bypass"), ("512", "baseline")]


def test_compare_alternating(corpus_dir, tmp_path):
    prog = compile_to(corpus_dir, tmp_path, "alternating6")
    out = tmp_path / "cmp.json"
    assert main(["compare", str(prog), "-o", str(out)]) == 0
    cfgs = json.loads(out.read_text())["configs"]
    assert set(cfgs) == {"bypass/offset", "bypass/shift", "baseline/offset", "baseline/shift"}
    assert cfgs["bypass/offset"]["stall_cycles"]["l2_transfer"] == 0
    assert cfgs["baseline/offset"]["stall_cycles"]["l2_transfer"] > 0
    assert cfgs["bypass/shift"]["stall_cycles"]["shift_propagation"] == 64 * 63


def test_profile_nvsa_symbolic_dominates(corpus_dir, tmp_path):
    out = tmp_path / "prof.json"
    assert main(["profile", str(corpus_dir / "nvsa_like.json"), "-o", str(out)]) == 0
    prof = json.loads(out.read_text())["profile"]
    assert prof["symbolic_pct"] > prof["neural_pct"]
    assert "generated_at" in json.loads(out.read_text())


def test_console_script_entry_point(corpus_dir):
    r = subprocess.run([sys.executable, "-m", "overmind.cli", "profile",
                        str(corpus_dir / "ltn_like.json"), "--no-timestamp"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["profile"]["linear_op_count"] > 0
