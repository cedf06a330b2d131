"""``overmind`` command-line driver.

Exit status: 0 on success, 1 on a domain error (bad graph, unreachable
target, config mismatch, ...), 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus, isa, pade
from .compiler import CompileOptions, HwConfig, activation_range, approximants, lower
from .errors import OvermindError
from .functions import FUNCTIONS, get_function
from .graph import OpKind, parse_graph, profile
from .machine import sim
from .machine.scaling import report_scaling, scaling_table
from .refexec import calibrate
from .tensorio import read_tensor, write_tensor


class UsageError(Exception):
    pass


def _normalize_argv(argv):
    """Join ``--range -8:8`` into ``--range=-8:8`` so negative bounds parse."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in ("--range", "--k-range") and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("range must satisfy LO < HI")
    return lo, hi


def _int_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError("k range must satisfy 1 <= LO <= HI")
    return lo, hi


def _hw(text: str) -> HwConfig:
    try:
        r, c, s = (int(v) for v in text.split(","))
        return HwConfig(R=r, C=c, sram_bytes=s)
    except (ValueError, OvermindError):
        raise argparse.ArgumentTypeError(f"expected R,C,SRAM_BYTES, got {text!r}") from None


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _fn_target(text: str) -> tuple[str, float]:
    fn, _, val = text.partition("=")
    if fn not in FUNCTIONS or not val:
        raise argparse.ArgumentTypeError(f"expected FUNCTION=MAE with a known function, got {text!r}")
    return fn, _positive(val)


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _pe_counts(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated PE counts, got {text!r}") from None


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _stamp(doc: dict, args) -> dict:
    if not args.no_timestamp:
        doc["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return doc


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _sim_config(args, hw: HwConfig, mode=None, circ=None) -> sim.SimConfig:
    mode = mode or args.mode
    circ = circ or args.circ
    if mode == sim.BASELINE:
        return sim.SimConfig.baseline(hw, args.l2_block, args.l2_width, circ_impl=circ)
    return sim.SimConfig(hw, circ_impl=circ)


def _program_hw(p: isa.Program, args) -> HwConfig:
    """``--hw`` when given (a mismatch is then reported by the simulator), else the header's."""
    if args.hw is not None:
        return args.hw
    return HwConfig(R=p.R, C=p.C, sram_bytes=p.sram_bytes)


def _program_inputs(p: isa.Program, args) -> dict:
    ops = sim.program_inputs(p)
    if args.inputs:
        d = Path(args.inputs)
        out = {}
        for o in ops:
            f = d / f"{o.tensor_id}.omt"
            if not f.is_file():
                raise UsageError(f"missing input tensor file {f}")
            out[o.tensor_id] = read_tensor(f)[1]
        return out
    rng = np.random.default_rng(args.seed)
    out = {}
    for o in ops:
        if o.dtype == "f32":
            out[o.tensor_id] = rng.uniform(-1.0, 1.0, o.shape).astype(np.float32)
        else:
            out[o.tensor_id] = rng.integers(-50, 51, o.shape).astype(np.int32)
    return out


def calibrate_program(p: isa.Program, inputs, cfg: sim.SimConfig) -> dict:
    """Per-tensor INT8 scales from one f32 simulation of ``p``."""
    values, _ = sim.run(p, inputs, cfg, keep_all=True)
    skip = {b.output.tensor_id for b in p.bundles if b.opcode == isa.Opcode.SimilaritySearch}
    return {tid: calibrate(tv) for tid, tv in values.items() if tid not in skip}


# -- commands ---------------------------------------------------------------------

def cmd_fit(args) -> int:
    spec = get_function(args.fn)
    rng = args.range or spec.default_range
    cfg = pade.FitConfig(method=args.method)
    p = pade.fit(spec, args.k, rng, cfg)
    mae = pade.max_abs_error(p, spec, rng)
    _emit(pade.to_json(p, mae) + "\n", args.out)
    print(f"MAE {mae:.6g} on [{rng[0]:g}, {rng[1]:g}] ({args.method}, m={p.m}, n={p.n})",
          file=sys.stderr if not args.out else sys.stdout)
    return 0


def _load_graph(path):
    return parse_graph(_existing(path).read_text())


def _compile_options(args) -> CompileOptions:
    return CompileOptions(target_mae=args.target_mae, function_targets=dict(args.fn_target or []),
                          max_pade_k=args.max_k, method=args.method, fixed_k=args.fixed_k)


def cmd_compile(args) -> int:
    g = _load_graph(args.graph)
    p = lower(g, args.hw or HwConfig(), _compile_options(args))
    out = args.out or str(Path(args.graph).with_suffix(".omp"))
    isa.save_program(out, p)
    if args.disasm:
        sys.stdout.write(isa.disassemble(p))
    else:
        print(f"wrote {out}: {len(p.bundles)} bundles")
    return 0


def cmd_disasm(args) -> int:
    p = isa.load_program(_existing(args.program))
    sys.stdout.write(isa.disassemble(p))
    return 0


def cmd_run(args) -> int:
    p = isa.load_program(_existing(args.program))
    hw = _program_hw(p, args)
    cfg = replace(_sim_config(args, hw), trace=bool(args.trace))
    inputs = _program_inputs(p, args)
    qparams = None
    if args.precision == "int8":
        qparams = calibrate_program(p, inputs, replace(cfg, trace=False))
    outs, rep = sim.run(p, inputs, cfg, qparams)
    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for tid, tv in outs.items():
            write_tensor(d / f"{tid}.omt", tv.array(), tv.meta.dtype)
    doc = _stamp({"precision": args.precision, "mode": cfg.mode, "circ_impl": cfg.circ_impl,
                  "outputs": {tid: tv.array().tolist() for tid, tv in outs.items()},
                  "report": rep.to_dict()}, args)
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.report)
    if args.trace:
        Path(args.trace).write_text(rep.trace_csv())
    return 0


def cmd_sweep(args) -> int:
    g = _load_graph(args.graph)
    hw = args.hw or HwConfig()
    inputs = corpus.random_inputs(g, args.seed, -4.0, 4.0)
    if args.scaling:
        base = sim.SimConfig.baseline(replace(hw, R=1), args.l2_block, args.l2_width,
                                      circ_impl=args.circ)
        rows = scaling_table(report_scaling(args.scaling, g, inputs, base,
                                            _compile_options(args)))
        fields = list(rows[0]) if rows else ["pe_count"]
    else:
        acts = [n for n in g.nodes if n.kind == OpKind.Activation]
        fns = sorted({n.attrs["function"] for n in acts})
        elems = sum(g.tensors[n.output].numel for n in acts)
        cfg = _sim_config(args, hw)
        rows = []
        for k in range(args.k_range[0], args.k_range[1] + 1):
            p = lower(g, hw, replace(_compile_options(args), fixed_k=k))
            _, rep = sim.run(p, inputs, cfg)
            row = {"pade_k": k}
            approx = approximants(p)
            for fn in fns:
                row[f"mae_{fn}"] = max(
                    pade.max_abs_error(approx[n.id], get_function(fn), activation_range(n))
                    for n in acts if n.attrs["function"] == fn)
            row.update(total_cycles=rep.total_cycles,
                       throughput=elems / rep.total_cycles if rep.total_cycles else 0.0,
                       utilization=rep.utilization)
            rows.append(row)
        fields = ["pade_k"] + [f"mae_{fn}" for fn in fns] + ["total_cycles", "throughput",
                                                              "utilization"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: f"{v:.6g}" if isinstance(v, float) else v for k, v in row.items()})
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_profile(args) -> int:
    g = _load_graph(args.graph)
    doc = _stamp({"graph": args.graph, "profile": profile(g).to_dict()}, args)
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_compare(args) -> int:
    p = isa.load_program(_existing(args.program))
    hw = _program_hw(p, args)
    inputs = _program_inputs(p, args)
    doc = {}
    for mode in (sim.BYPASS, sim.BASELINE):
        for circ in (sim.OFFSET, sim.SHIFT):
            _, rep = sim.run(p, inputs, _sim_config(args, hw, mode, circ))
            d = rep.to_dict()
            d.pop("bundles")
            doc[f"{mode}/{circ}"] = d
    _emit(json.dumps(_stamp({"program": args.program, "configs": doc}, args), indent=2,
                     sort_keys=True) + "\n", args.out)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overmind", description="Padé/bypass accelerator toolchain")
    sub = ap.add_subparsers(dest="command", required=True)

    hw = argparse.ArgumentParser(add_help=False)
    hw.add_argument("--hw", type=_hw, metavar="R,C,SRAM", help="array rows, columns, SRAM bytes")
    simp = argparse.ArgumentParser(add_help=False)
    simp.add_argument("--mode", choices=(sim.BYPASS, sim.BASELINE), default=sim.BYPASS)
    simp.add_argument("--circ", choices=(sim.OFFSET, sim.SHIFT), default=sim.OFFSET)
    simp.add_argument("--l2-block", type=int, default=256, help="baseline L1 block (elements)")
    simp.add_argument("--l2-width", type=int, default=16, help="baseline L2->L1 elements/cycle")
    simp.add_argument("--seed", type=int, default=0, help="seed for generated inputs")
    stamp = argparse.ArgumentParser(add_help=False)
    stamp.add_argument("--no-timestamp", action="store_true")
    comp = argparse.ArgumentParser(add_help=False)
    comp.add_argument("--target-mae", type=_positive, default=1e-3)
    comp.add_argument("--fn-target", type=_fn_target, action="append", metavar="FN=MAE")
    comp.add_argument("--max-k", type=_pos_int, default=8)
    comp.add_argument("--method", choices=pade.METHODS, default=pade.LEAST_SQUARES)
    comp.add_argument("--fixed-k", type=_pos_int)

    p = sub.add_parser("fit", help="fit Padé coefficients")
    p.add_argument("--fn", required=True, choices=sorted(FUNCTIONS))
    p.add_argument("--k", type=_pos_int, required=True)
    p.add_argument("--range", type=_range, metavar="LO:HI")
    p.add_argument("--method", choices=pade.METHODS, default=pade.LEAST_SQUARES)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compile", parents=[hw, comp], help="lower a graph to an .omp program")
    p.add_argument("graph")
    p.add_argument("-o", "--out")
    p.add_argument("--disasm", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", parents=[hw, simp, stamp], help="simulate a program")
    p.add_argument("program")
    p.add_argument("--inputs", metavar="DIR", help="directory of <tensor>.omt files")
    p.add_argument("--precision", choices=("f32", "int8"), default="f32")
    p.add_argument("--out-dir")
    p.add_argument("--report", help="SimReport JSON path (default stdout)")
    p.add_argument("--trace", help="per-event CSV trace path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[hw, simp, comp], help="sweep Padé orders or PE counts")
    p.add_argument("graph")
    p.add_argument("--k-range", type=_int_range, default=(3, 6), metavar="LO:HI")
    p.add_argument("--scaling", type=_pe_counts, metavar="P1,P2,...",
                   help="sweep PE counts instead of Padé orders")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("profile", parents=[stamp], help="workload profile of a graph")
    p.add_argument("graph")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("compare", parents=[hw, simp, stamp], help="bypass vs baseline report")
    p.add_argument("program")
    p.add_argument("--inputs", metavar="DIR")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("disasm", help="print a program listing")
    p.add_argument("program")
    p.set_defaults(func=cmd_disasm)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    argv = _normalize_argv(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (OvermindError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
