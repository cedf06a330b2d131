"""Cycle-level datapath simulator."""
from .sim import (BASELINE, BYPASS, OFFSET, SHIFT, STALL_CAUSES, BundleTiming, FilterState,
                  SimConfig, SimReport, program_inputs, program_outputs, run, window_accept)
from .scaling import ScalingRow, report_scaling

__all__ = ["BASELINE", "BYPASS", "OFFSET", "SHIFT", "STALL_CAUSES", "BundleTiming", "FilterState",
           "SimConfig", "SimReport", "program_inputs", "program_outputs", "run", "window_accept",
           "ScalingRow", "report_scaling"]
