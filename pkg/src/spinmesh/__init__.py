"""Discrete spin transformations of closed triangle meshes.

Shapes are flowed in curvature space: a per-face quaternion field ``phi``
solving a Dirac-type equation rotates and scales the edges of a mesh, and the
transformed edges are integrated back into positions.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .net import FaceEdgeNet, MeshConstructionError, SingularFoldError, build_net  # noqa: E402
from .dirac import assemble_extrinsic, assemble_intrinsic, assemble_shifted, smallest_eigenpairs  # noqa: E402
from .spin import SolveConfig, SpinSolverError, prescribe_rho, solve_spin, solve_spin_detailed  # noqa: E402
from .integrate import apply_spin, integrate_edges  # noqa: E402
from .flows import (CurvatureMap, FlowConfig, FlowError, compare_flows, extrude, flow_to_sphere,  # noqa: E402
                    mean_curvature_flow_baseline, round_trip)
from .metrics import (DeformationReport, align_similarity, area_distortion, conformality_factor,  # noqa: E402
                      point_to_surface_error, willmore_energy)

__all__ = [
    "FaceEdgeNet", "MeshConstructionError", "SingularFoldError", "build_net",
    "assemble_intrinsic", "assemble_extrinsic", "assemble_shifted", "smallest_eigenpairs",
    "SolveConfig", "SpinSolverError", "prescribe_rho", "solve_spin", "solve_spin_detailed",
    "apply_spin", "integrate_edges",
    "CurvatureMap", "FlowConfig", "FlowError", "compare_flows", "extrude", "flow_to_sphere",
    "mean_curvature_flow_baseline", "round_trip",
    "DeformationReport", "align_similarity", "area_distortion", "conformality_factor",
    "point_to_surface_error", "willmore_energy",
]
