"""Adaptive FedECADO: federated learning simulated as a coupled circuit ODE system.

Clients integrate gradient flows with adaptive Forward-Euler steps; the
server couples them through critically damped inductor flows and
integrates the central state with adaptive Backward-Euler.
"""

from .core import (CentralState, ClientRecord, Config, ShapeError, StepMemory,
                   TrajectorySegment, as_param, max_abs)
from .objectives import LogisticObjective, MLPObjective, QuadraticObjective
from .sensitivity import (DampingRegime, LinearizedSystem, SensitivityModel, branch_eigenvalues,
                          build_sensitivity, critical_inductance, damping_classify,
                          perturbation_sensitivity, simulate_rlc, system_eig_oracle)
from .client import ClientStepTrace, client_local_round, fe_lte, fe_stability_bound, select_client_step
from .server import (AggregationStep, aggregate_round, be_lte, be_step_solve, interpolate_state,
                     select_server_step)
from .federation import (BaselineSpec, RoundReport, RunResult, consensus_minimizer, precompute,
                         run_baseline, run_fedecado)
from .data import (Dataset, PartitionPlan, dirichlet_partition, load_csv, make_synthetic,
                   sample_epochs, write_csv)
from .harness import ExperimentConfig, parse_config, run_experiment, sweep, usable_rate
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
