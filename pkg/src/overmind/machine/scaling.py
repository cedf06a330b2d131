"""PE-count scaling sweep: SRAM per thread and active-PE fraction, bypass vs baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Mapping, Optional, Sequence

from ..compiler import CompileOptions, lower
from ..graph import Graph
from .sim import BASELINE, BYPASS, SimConfig, run


@dataclass(frozen=True)
class ScalingRow:
    pe_count: int
    R: int
    C: int
    mode: str
    sram_per_thread_bytes: int
    active_pe_fraction: float
    total_cycles: int


def report_scaling(pe_counts: Sequence[int], workload: Graph, inputs: Mapping,
                   template: SimConfig = SimConfig.baseline(),
                   opts: CompileOptions = CompileOptions(),
                   qparams: Optional[Mapping] = None) -> list[ScalingRow]:
    """Compile and simulate ``workload`` at each PE count (R = count / C).

    ``template`` fixes C, bus width and the baseline L1 parameters; each point
    is simulated once in bypass mode and once in the two-level baseline.
    """
    C = template.hw.C
    rows = []
    for count in pe_counts:
        if count % C:
            raise ValueError(f"PE count {count} is not a multiple of C={C}")
        hw = replace(template.hw, R=count // C)
        prog = lower(workload, hw, opts)
        for mode in (BYPASS, BASELINE):
            if mode == BYPASS:
                cfg = replace(template, hw=hw, mode=BYPASS, l2_block_elems=None,
                              l2_transfer_width=None)
            else:
                cfg = replace(template, hw=hw, mode=BASELINE)
            _, rep = run(prog, inputs, cfg, qparams)
            rows.append(ScalingRow(count, hw.R, C, mode, rep.sram_per_thread_bytes,
                                   rep.utilization, rep.total_cycles))
    return rows


def scaling_table(rows: Sequence[ScalingRow]) -> list[dict]:
    return [asdict(r) for r in rows]
