"""Toolchain for a Padé-approximating, memory-bypass neuro-symbolic accelerator:
rational fitting, graph IR, reference execution, instruction format, compiler
and cycle-level simulator."""
from .errors import (CalibrationError, ConfigError, CyclicGraph, DegenerateFit, FormatError,
                     MissingCalibration, OvermindError, ParseError, PlacementError, PoleInRange,
                     ShapeError, SimulationFault, TargetUnreachable, UnknownOperator)

__version__ = "0.1.0"
