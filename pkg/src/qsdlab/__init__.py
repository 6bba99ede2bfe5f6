"""Quasi-stationary distributions of absorbed Markov chains: conditioned
evolution, stochastic domination of trajectories, and closed-form checks for
birth-and-death, periodic and continuous-time random walks."""
from .chain import (
    ABSORB,
    HOLD,
    AbsorbedKernel,
    Distribution,
    StateSpace,
    YaglomReport,
    evolve_conditioned,
    qsd_residual,
    survival_mass,
    tv_distance,
    validate_kernel,
    yaglom_iterate,
)
from .errors import *  # noqa: F401,F403
from .order import build_monotone_coupling, dominates, quantile_couple_step
from .trajectory import TrajectoryMeasure

__version__ = "0.1.0"
