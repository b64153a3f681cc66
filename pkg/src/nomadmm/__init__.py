"""Joint activity and data detection for codebook-based grant-free NOMA."""

from .model import (
    Codebook,
    SystemConfig,
    ChannelRealization,
    TransmitFrame,
    assemble_channel_matrix,
    encode_slot,
    example_codebook,
    generate_frame,
    load_codebook,
    observe,
    perturb_channel,
    save_codebook,
)
from .prox import block_soft_threshold, soft_threshold
from .solvers import (
    AdmmConfig,
    AdmmState,
    ConvergenceReport,
    DivergenceError,
    admm_group_lasso,
    admm_prior_aided,
    admm_sparse_group_lasso,
    check_rho_conditions,
)

from .estimators import GroupLassoADMM, PriorAidedADMM, SparseGroupLassoADMM

__version__ = "0.1.0"
