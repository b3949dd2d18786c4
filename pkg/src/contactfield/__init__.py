"""Dense extrinsic contact fields from tool point clouds and tactile signals.

The package labels tool points with contact probabilities and 3D contact
forces, either from simulated contacts against a signed-distance scene or
from real tactile wrenches via a friction-cone constrained force fit.
"""

from contactfield import _backend
from contactfield.core import (
    CompositeInput,
    ContactField,
    Frame,
    TactileState,
    assemble_composite,
    read_episode,
    read_fields,
    write_episode,
    write_fields,
)
from contactfield.errors import (
    CalibrationError,
    ConfigError,
    ContactFieldError,
    EmptyProblemError,
    ParseError,
    SolverError,
    ValidationError,
)
from contactfield.force_opt import SocpProblem, SocpSolution, SolverConfig, solve, verify
from contactfield.tactile import CalibrationScale, FilterConfig, GateConfig, Wrench, compute_wrench

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "CalibrationScale", "CompositeInput", "ConfigError", "ContactField",
    "ContactFieldError", "EmptyProblemError", "FilterConfig", "Frame", "GateConfig", "ParseError",
    "SocpProblem", "SocpSolution", "SolverConfig", "SolverError", "TactileState", "ValidationError",
    "Wrench", "assemble_composite", "backend", "compute_wrench", "read_episode", "read_fields",
    "solve", "verify", "write_episode", "write_fields",
]


def backend():
    """Name of the active kernel implementation (``"cython"`` or ``"python"``)."""
    return _backend.NAME
