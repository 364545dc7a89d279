"""Gradient methods with growing sample sizes: problems, samplers, error bounds and drivers."""

from .problems import (BinaryLogistic, LeastSquares, MultinomialLogistic, ProblemConstants,
                       SumProblem, SyntheticQuadratic, lipschitz_bound_logistic)
from .sampling import SampleSet, Schedule, draw_sample
from .theory import NoiseBoundSequence, inject_noise
from .optimizers import (Budget, RunConfig, StepPolicy, Trace, run, run_controlled_error_gd,
                         run_deterministic_qn, run_hybrid_qn, run_sampled_gd, run_stochastic_gd)

__version__ = "0.1.0"

__all__ = [
    "BinaryLogistic", "LeastSquares", "MultinomialLogistic", "ProblemConstants", "SumProblem",
    "SyntheticQuadratic", "lipschitz_bound_logistic", "SampleSet", "Schedule", "draw_sample",
    "NoiseBoundSequence", "inject_noise", "Budget", "RunConfig", "StepPolicy", "Trace", "run",
    "run_controlled_error_gd", "run_deterministic_qn", "run_hybrid_qn", "run_sampled_gd",
    "run_stochastic_gd",
]
