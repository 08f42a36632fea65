"""Random layer allocation for federated adapter fine-tuning of residual stacks."""

from .allocation import AllocationError, AllocationMatrix, Strategy, generate_allocation
from .federation import (
    MissingLayerStrategy,
    RoundConfig,
    aggregate_lora,
    run_federation,
    run_round,
    subset_convergence,
)
from .kernels import BACKEND
from .model import StackModel, SubModel, build_stack_model, evaluate, extract_submodel, forward
from .theory import BoundInputs, InfeasibleError, lr_feasible_interval, convergence_bound

__version__ = "0.1.0"

__all__ = [
    "AllocationError", "AllocationMatrix", "Strategy", "generate_allocation",
    "MissingLayerStrategy", "RoundConfig", "aggregate_lora", "run_federation", "run_round",
    "subset_convergence", "BACKEND", "StackModel", "SubModel", "build_stack_model", "evaluate",
    "extract_submodel", "forward", "BoundInputs", "InfeasibleError", "lr_feasible_interval",
    "convergence_bound",
]
