"""Forward and adjoint solvers for Caputo fractional delay control systems,
with pointwise screening of first- and second-order necessary conditions."""

from __future__ import annotations

from fracdelay.adjoint import AdjointPath, hamiltonian, solve_adjoint
from fracdelay.conditions import (
    ConditionReport,
    Process,
    check_conditions,
    check_pmp,
    check_second_order,
    check_singular,
    delta_v,
)
from fracdelay.forward import SolverError, Trajectory, evaluate_cost, solve_fdde
from fracdelay.fundmatrix import FundamentalMatrix, representation_solution, solve_F, solve_F1
from fracdelay.problem import (
    ConfigError,
    ControlSet,
    ControlSignal,
    ProblemSpec,
    TimeGrid,
    builtin_example,
    load_problem,
    load_problem_file,
    spike_control,
)
from fracdelay.variation import SpikeExperiment, gronwall_probe, lebesgue_asymptotic_check, run_spike

__all__ = [
    "AdjointPath", "ConditionReport", "ConfigError", "ControlSet", "ControlSignal",
    "FundamentalMatrix", "Process", "ProblemSpec", "SolverError", "SpikeExperiment",
    "TimeGrid", "Trajectory", "builtin_example", "check_conditions", "check_pmp",
    "check_second_order", "check_singular", "delta_v", "evaluate_cost", "gronwall_probe",
    "hamiltonian", "lebesgue_asymptotic_check", "load_problem", "load_problem_file",
    "representation_solution", "run_spike", "solve_F", "solve_F1", "solve_adjoint",
    "solve_fdde", "spike_control",
]
