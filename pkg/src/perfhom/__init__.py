"""Homogenization toolkit for degenerate elliptic operators on perforated cells.

The package builds periodic perforated geometries, assembles weighted
piecewise-linear finite elements, solves the corrector cell problems for
the operator -div(phi^2 A grad), and provides the experiment pipelines
(convergence ladder, uniform-regularity ratios, functional-inequality
probes, spectral asymptotics) behind the ``perfhom`` command line tool.
"""

__version__ = "0.1.0"

from .geometry import (CellGeometry, HoleSpec, PerforatedDomainSpec,
                       build_cell_geometry, build_perforated_domain)
from .mesh import (Mesh, fill_holes, tile_domain_mesh, triangulate_cell,
                   triangulate_solid)
from .fem import CoefficientField, IDENTITY, LinearSolveSpec, SparseMatrix
from .weight import (WeightField, distance_weight, evaluate_weight_on_domain,
                     ground_state_weight)
from .cell_problem import (CorrectorSet, FluxCorrectors, HomogenizedTensor,
                           flux_correctors, flux_divergence_residual,
                           homogenized_matrix, solve_correctors)
from .solvers import (EpsSolution, HomogenizedSolution, SpectralReport,
                      dirichlet_spectrum_eps, homogenized_spectrum,
                      make_F_eps, solve_eps_problem, solve_homogenized)
from .analysis import (CellArtifacts, ConvergenceReport, LipschitzReport,
                       ProbeReport, build_cell_artifacts, convergence_study,
                       extension_probe, first_order_approximation, fit_loglog,
                       lipschitz_uniformity, poincare_probe, probe_study,
                       sobolev_linf_probe, spectrum_study)
from .config import ExperimentConfig, config_from_echo, load_config

__all__ = [
    "__version__",
    "CellGeometry", "HoleSpec", "PerforatedDomainSpec",
    "build_cell_geometry", "build_perforated_domain",
    "Mesh", "fill_holes", "tile_domain_mesh", "triangulate_cell",
    "triangulate_solid",
    "CoefficientField", "IDENTITY", "LinearSolveSpec", "SparseMatrix",
    "WeightField", "distance_weight", "evaluate_weight_on_domain",
    "ground_state_weight",
    "CorrectorSet", "FluxCorrectors", "HomogenizedTensor",
    "flux_correctors", "flux_divergence_residual", "homogenized_matrix",
    "solve_correctors",
    "EpsSolution", "HomogenizedSolution", "SpectralReport",
    "dirichlet_spectrum_eps", "homogenized_spectrum", "make_F_eps",
    "solve_eps_problem", "solve_homogenized",
    "CellArtifacts", "ConvergenceReport", "LipschitzReport", "ProbeReport",
    "build_cell_artifacts", "convergence_study", "extension_probe",
    "first_order_approximation", "fit_loglog", "lipschitz_uniformity",
    "poincare_probe", "probe_study", "sobolev_linf_probe", "spectrum_study",
    "ExperimentConfig", "config_from_echo", "load_config",
]
