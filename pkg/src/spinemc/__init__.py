"""Branching-process simulation with k-spine skeleton estimators."""

__version__ = "0.1.0"

from .core import (
    MarkedTree,
    ParticleRecord,
    SkeletonRealization,
    SpineAssignment,
    extract_skeleton,
    spine_probability,
)
from .laws import BranchRate, DegenerateLawError, OffspringLaw
from .motion import (
    AbsorbedBrownian,
    BrownianMotion,
    ContinuousChain,
    DiscreteChain,
    martingale_check,
)
from .reports import EstimateReport
from .sim_ct import (
    BranchingModel,
    ExplosionError,
    WeightedSkeleton,
    attach_spines,
    skeleton_weight,
    simulate_p,
    simulate_skeleton_q,
    z_process,
    zeta_tilde,
)
from .sim_dt import (
    DiscreteModel,
    SpineStateStatistic,
    skeleton_weight_dt,
    oracle_lhs,
    oracle_rhs,
    simulate_p_dt,
    simulate_skeleton_q_dt,
)
from .estimators import (
    Statistic,
    compare_variance,
    estimate_direct,
    estimate_spine,
    indicator_above,
    many_to_one_closed_form,
    many_to_two_closed_form,
    ones,
    tail_lower_bound,
    tail_upper_bound,
)
