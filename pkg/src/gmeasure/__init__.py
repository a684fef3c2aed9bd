"""Numerics for g-measures on finite-alphabet one-sided shifts.

Transfer-operator iteration, maximal-coupling block extensions dominated by
an integer renewal chain, Hellinger block-variation bounds and
finite-horizon checks of uniqueness conditions.
"""

__version__ = "0.1.0"

from .blockvar import (
    BlockStructure,
    BlockVariationPair,
    ConditionVerdict,
    RhoBlock,
    check_conditions,
    delta_bar,
    h_block,
    make_blocks,
    r_from_variations,
    rates_from_rho,
    rho_block,
    validity_report,
)
from .coupling import CoupledState, CouplingTrace, coupled_block_extension, estimate_dbar, iterate_attractor, run_coupling
from .measures import BlockMarginal, CylinderMeasure, adjoint_power, block_marginal, stationary_measure
from .metrics import (
    CouplingSample,
    MetricReport,
    f_delta,
    hellinger_integral,
    one_step_h,
    sample_maximal_coupling,
    total_variation,
    wasserstein_ultra,
)
from .renewal import RenewalSpec, YTrace, build_spec, renewal_exact, simulate_Y
from .symbolic import (
    Alphabet,
    GFunction,
    LogisticG,
    TableG,
    VariationSequence,
    concordance,
    eval_g,
    finite_approx,
    variation,
    variation_sequence,
)

__all__ = [name for name in dir() if not name.startswith("_")]
