"""Distributed voltage control on radial feeders.

Library layout:

* :mod:`distvolt.network` -- feeder model, incidence algebra, linear voltages
* :mod:`distvolt.feasible` -- per-bus box/disk sets and exact projections
* :mod:`distvolt.solver` -- synchronous primal-dual iteration and residuals
* :mod:`distvolt.asynchronous` -- bounded-delay randomized execution engine
* :mod:`distvolt.operators` -- splitting operators and property checks
* :mod:`distvolt.acflow` -- lossy branch-flow sweep (linearization oracle)
* :mod:`distvolt.scenario` -- config files, daily loop, online estimator
* :mod:`distvolt.cli` -- `distvolt` command-line interface
"""

from .network import (NetworkModel, build_network, balance_offsets,
                      linear_voltage, load_feeder, with_loads)
from .feasible import (FeasibleRegion, make_region, symmetric_region,
                       project, project_all, read_limits)
from .solver import (PrimalDualState, QuadraticCost, SolverParams, SolveResult,
                     default_params, initial_state, kkt_residual,
                     relaxation_limit, solve_sync, sync_step, validate_params,
                     zero_cost)
from .asynchronous import AsyncSchedule, AsyncSimulation, run_async
from .acflow import ACSolution, NotConverged, linearization_error, solve_ac
from .scenario import (MeasurementFrame, Scenario, estimate_offset_online,
                       estimate_offsets, run_daily, run_static)

__version__ = "0.1.0"

__all__ = [
    "NetworkModel", "build_network", "balance_offsets", "linear_voltage",
    "load_feeder", "with_loads",
    "FeasibleRegion", "make_region", "symmetric_region", "project",
    "project_all", "read_limits",
    "PrimalDualState", "QuadraticCost", "SolverParams", "SolveResult",
    "default_params", "initial_state", "kkt_residual", "relaxation_limit",
    "solve_sync", "sync_step", "validate_params", "zero_cost",
    "AsyncSchedule", "AsyncSimulation", "run_async",
    "ACSolution", "NotConverged", "linearization_error", "solve_ac",
    "MeasurementFrame", "Scenario", "estimate_offset_online",
    "estimate_offsets", "run_daily", "run_static",
]
