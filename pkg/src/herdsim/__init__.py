"""Sparse mean-field herding control toolkit.

Particle, McKean-Vlasov and Fokker-Planck solvers for a noisy herd steered
by a few controlled herders, plus cost functionals and a derivative-free
optimizer over separated-variable controls.
"""

__version__ = "0.1.0"

from . import _backend as backend
from .controls import ControlBoxError, ControlLaw, GFunctional
from .cost import ControlCost, CostEstimate, CostSpec, Lagrangian, eval_F, eval_FN
from .fokker_planck import (
    DomainTooSmallError,
    FPSolution,
    GridDensity,
    SchemeViolationError,
    equivalence_check,
    solve_fp,
)
from .kernels import KernelSet, KernelSpec, LipschitzCertificateError, interaction_sum
from .mckean_vlasov import (
    LawFlow,
    MKVSolution,
    PicardConfig,
    PicardNonConvergenceError,
    coupled_chaos_run,
    law_distance,
    solve_mkv,
)
from .measures import EmpiricalMeasure, moment, sampling_rate, wasserstein1, wasserstein_p
from .optimize import ControlChart, OptimizationReport, gamma_gap_experiment, minimize, stability_experiment
from .particles import InitialLaw, NoiseLevel, SystemState, Trajectory, simulate, simulate_batch
from .presets import Dynamics, benchmark
from .rng import BrownianTape, replica_seed

__all__ = [
    "BrownianTape", "ControlBoxError", "ControlChart", "ControlCost", "ControlLaw", "CostEstimate", "CostSpec",
    "DomainTooSmallError", "Dynamics", "EmpiricalMeasure", "FPSolution", "GFunctional", "GridDensity",
    "InitialLaw", "KernelSet", "KernelSpec", "Lagrangian", "LawFlow", "LipschitzCertificateError",
    "MKVSolution", "NoiseLevel", "OptimizationReport", "PicardConfig", "PicardNonConvergenceError",
    "SchemeViolationError", "SystemState", "Trajectory", "backend", "benchmark", "coupled_chaos_run",
    "equivalence_check", "eval_F", "eval_FN", "gamma_gap_experiment", "interaction_sum", "law_distance",
    "minimize", "moment", "replica_seed", "sampling_rate", "simulate", "simulate_batch", "solve_fp",
    "solve_mkv", "stability_experiment", "wasserstein1", "wasserstein_p",
]
