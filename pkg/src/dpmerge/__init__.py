"""Privacy accounting for merging differentially private models.

Given N models trained on one dataset with known hyperparameters, this
package certifies (eps, delta) guarantees for two data-independent
merges, random selection and linear combination, under both Renyi and
privacy-loss-distribution accounting, and sweeps merge weights against a
target guarantee.
"""

__version__ = "0.1.0"

from .core import (
    DpGuarantee,
    DpSgdMechanism,
    GaussianMechanism,
    MergeWeights,
    OrderGrid,
    default_order_grid,
    dominates,
    integer_order_grid,
    validate_weights,
)
from .rdp import (
    RdpCurve,
    compose_rdp,
    curve_for_spec,
    gaussian_rdp_curve,
    rdp_to_dp,
    subsampled_gaussian_rdp_curve,
)
from .pld import (
    DiscretePld,
    PldPair,
    convolve,
    gaussian_pld,
    pld_delta,
    pld_epsilon,
    pld_for_spec,
    self_convolve,
    subsampled_gaussian_step_pld,
)
from .merge_rs import (
    Accountant,
    rs_dp_eps,
    rs_feasible_set,
    rs_pld_delta,
    rs_rdp_curve,
    rs_sample,
)
from .merge_lc import (
    align_virtual_steps,
    derive_step_params,
    lc_combine,
    lc_dp_eps,
    lc_feasible_set,
    lc_pld_delta,
    lc_rdp_curve,
    lc_step_rdp,
)
from .baselines import (
    CompositionReport,
    advanced_composition,
    compare_prop10,
    joint_pld_bound,
    joint_rdp_bound,
)
