"""Exact and almost-linear-time gradients for attention with rotary position weights."""

from .errors import (
    ApproximationError,
    ConfigError,
    GuardError,
    InstanceBoundError,
    InstanceError,
    ParameterError,
    RankBudgetError,
    RopeGradError,
    ShapeError,
    SizingError,
    UnsupportedFastPathError,
)
from .exact import chain_to_factors, exact_gradient, gradient_entry_oracle, oracle_gradient
from .harness import finite_diff_gradient, gen_instance, run_bench
from .lowrank import fast_contract, fast_gradient, lift_and_factor_A, naive_contract, trig_features
from .model import (
    Instance,
    RopeWeights,
    forward,
    load_instance,
    make_general_weights,
    make_identity_weights,
    make_rotary_weights,
    save_instance,
)
from .polyexp import PolyApprox, build_poly, select_degree
from .report import BenchRow, GradReport
from .verify import run_verify

__version__ = "0.1.0"
