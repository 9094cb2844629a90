"""Free-stream preservation study for a DGSEM on curved, non-conforming hexahedral meshes."""
from .geometry import DeformSpec
from .harness import RunConfig, parse_config, run_freestream, run_sweep
from .mesh import build_mesh, validate_topology
from .metrics import STRATEGIES, assemble_metrics
from .solver import Discretization, SolverConfig, rk_advance
from .spectral import build_node_set

__all__ = [
    "DeformSpec", "Discretization", "RunConfig", "STRATEGIES", "SolverConfig",
    "assemble_metrics", "build_mesh", "build_node_set", "parse_config", "rk_advance",
    "run_freestream", "run_sweep", "validate_topology",
]
__version__ = "0.1.0"
