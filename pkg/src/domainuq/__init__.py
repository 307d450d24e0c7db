"""Lattice quasi-Monte Carlo for the Poisson problem on randomly perturbed domains."""

from .errors import DomainUQError
from .fem import map_mesh, solve_capacity_pair, solve_source, structured_mesh
from .harness import Experiment, ExperimentConfig, fit_rate, run_experiment
from .lattice import LatticeRule, build_spod_params, cbc_construct, lattice_points, worst_case_error_sq
from .random_field import FieldSpec, b_sequence, displacement, jacobian, transport_data

__version__ = "0.1.0"

__all__ = [
    "DomainUQError",
    "Experiment",
    "ExperimentConfig",
    "FieldSpec",
    "LatticeRule",
    "b_sequence",
    "build_spod_params",
    "cbc_construct",
    "displacement",
    "fit_rate",
    "jacobian",
    "lattice_points",
    "map_mesh",
    "run_experiment",
    "solve_capacity_pair",
    "solve_source",
    "structured_mesh",
    "transport_data",
    "worst_case_error_sq",
]
