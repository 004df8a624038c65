"""QC relaxation of AC optimal power flow with voltage-difference constraints,
Meyer-Floudas trilinear envelopes and optimization-based bound tightening."""
from .conic import ConicProgram, SolveResult, Tolerances, evaluate, solve
from .envelopes import Interval, TrigBounds
from .netdata import Branch, Bus, Generator, Network, load_case, parse_case, sanitize, validate
from .obbt import ObbtConfig, ObbtTrace, tighten
from .qcmodel import ACPoint, BoundSet, QcModel, QcVariant, VARIANTS, build, check_ac_point, lift_ac_point

__all__ = [
    "ACPoint", "BoundSet", "Branch", "Bus", "ConicProgram", "Generator", "Interval", "Network",
    "ObbtConfig", "ObbtTrace", "QcModel", "QcVariant", "SolveResult", "Tolerances", "TrigBounds",
    "VARIANTS", "build", "check_ac_point", "evaluate", "lift_ac_point", "load_case", "parse_case",
    "sanitize", "solve", "tighten", "validate",
]
