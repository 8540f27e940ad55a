"""Entropy-regularized real-option stopping: closed form, policy iteration and a sample-based learner."""

from .boundary import (BoundaryError, GridBoundary, init_exponential, init_linear, isotonic_project,
                       l1_distance, make_grid, read_boundary_csv, sup_distance, validate_initial,
                       write_boundary_csv, y_floor)
from .closed_form import ClosedFormSolution, vanishing_sweep
from .model import (PAPER_PARAMS, CustomProfit, ModelError, ModelParams, PowerProfit,
                    characteristic_roots, classical_boundary, resolvent, validate)
from .model_free import (SpiConfig, ZeroOrderConfig, estimate_value_grid, learn_y_floor,
                         mixed_difference, run_spi, spi_update)
from .policy_eval import evaluate_policy, hjb_residual, value_of
from .policy_iter import InitializationError, run_pi, update_boundary
from .simulator import PathConfig, Simulator, mc_value
from .trace import IterationTrace

__version__ = "0.1.0"
