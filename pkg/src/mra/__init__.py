"""Dual decomposition with multiple-response agents (MRA) primal recovery."""

from .core import (BlockAffineCoupling, BlockPrimalPoint, DualPoint, Residuals, dual_value, local_prices,
                   relative_primal_infeasibility, relative_suboptimality, residuals)
from .agents import AgentModel, AgentPool, OracleConfig, ResponseBundle, compose_bundle, conjugate_oracle
from .recovery import RecoveryConfig, RecoveryResult, recover, recover_convex, recover_milp_exact, \
    recover_milp_heuristic
from .pricing import AccpmState, Cut, PriceBox, SubgradState, averaged_dual, generate_cut, make_price_box
from .benchmarks import InstanceBundle, generate, load_instance, reference_solve
from .harness import ExperimentConfig, run_experiment

__version__ = "0.1.0"
