"""Rate-distortion tools for task-oriented semantic communication on discrete sources."""
from .distortion import DistortionMatrix, SemanticSource
from .prob import ConditionalDistribution, DimensionError, Distribution, JointDistribution
from .solver import InfeasibleError, SolverConfig, SolverResult, brute_force_solve, rd_curve, solve

__version__ = "0.1.0"
