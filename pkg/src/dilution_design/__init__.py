"""Optimal dilution designs for estimating the density of repopulating cells."""
from .criteria import (Criterion, evaluate, expected_dead_mice, fisher_information,
                       r_kernel, spoilt_probability, y_max)
from .errors import DesignError
from .measure import (ConstraintSpec, DesignMeasure, normalize, round_to_integer_design,
                      total_mass, total_volume)
from .one_atom import CrossCheck, OneAtomSolution, cross_check, solve_one_atom, threshold
from .optimizer import OptimalityCertificate, OptimizerConfig, certify, optimize, refine
from .priors import Gamma, PointMass, QuadratureConfig, TwoPoint, Uniform, parse_prior
from .simulate import mle, simulate_experiment, variance_study

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec", "Criterion", "CrossCheck", "DesignError", "DesignMeasure", "Gamma",
    "OneAtomSolution", "OptimalityCertificate", "OptimizerConfig", "PointMass",
    "QuadratureConfig", "TwoPoint", "Uniform", "certify", "cross_check", "evaluate",
    "expected_dead_mice", "fisher_information", "mle", "normalize", "optimize",
    "parse_prior", "r_kernel", "refine", "round_to_integer_design",
    "simulate_experiment", "solve_one_atom", "spoilt_probability", "threshold",
    "total_mass", "total_volume", "variance_study", "y_max",
]
