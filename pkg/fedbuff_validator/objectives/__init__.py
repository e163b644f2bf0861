"""
Synthetic objective families and their gradient oracles.
"""

from fedbuff_validator.objectives.base_objective import (
    ClientDataset,
    Objective,
    ParamVector,
    ProblemConstants,
    as_param_vector,
    check_param_vector,
)
from fedbuff_validator.objectives.logistic import LogisticNonconvex
from fedbuff_validator.objectives.oracles import (
    GradientOracle,
    Problem,
    build_problem,
    certify_constants,
    check_smoothness,
    estimate_variance,
    full_gradient,
    generate_probe_points,
    generate_problem,
    global_gradient,
    global_objective,
    local_objective,
    make_gradient_oracle,
    measure_diversity,
    stochastic_gradient,
)
from fedbuff_validator.objectives.quadratic import QuadraticMixture

__all__ = [
    "ClientDataset",
    "GradientOracle",
    "LogisticNonconvex",
    "Objective",
    "ParamVector",
    "Problem",
    "ProblemConstants",
    "QuadraticMixture",
    "as_param_vector",
    "build_problem",
    "certify_constants",
    "check_param_vector",
    "check_smoothness",
    "estimate_variance",
    "full_gradient",
    "generate_probe_points",
    "generate_problem",
    "global_gradient",
    "global_objective",
    "local_objective",
    "make_gradient_oracle",
    "measure_diversity",
    "stochastic_gradient",
]
