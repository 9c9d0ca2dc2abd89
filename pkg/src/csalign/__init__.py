"""Kernel-based Cauchy-Schwarz divergence estimation, Euclidean
alignment, divergence-guided source selection, and multi-source
domain-adaptation training."""

from .adapt import (
    BandwidthPlan,
    LossBreakdown,
    ScheduleConfig,
    TrainConfig,
    TrainResult,
    dla_loss,
    fla_loss,
    schedule,
    source_weights,
    train,
)
from .alignment import euclidean_align, mean_trial_covariance
from .data import SubjectDataset, Trial
from .divergence import (
    DivergenceValue,
    ccs_divergence,
    cs_divergence,
    cs_gaussian_closed_form,
)
from .kernels import KernelConfig, gaussian_gram, median_bandwidth, multi_kernel_gram
from .linalg import (
    check_gradients,
    inv_sqrt_psd,
    pairwise_sq_dists,
    stable_sigmoid,
    sym_eig_psd,
)
from .model import (
    BackboneConfig,
    Metrics,
    cross_entropy,
    evaluate,
    forward,
    init_params,
    load_checkpoint,
    one_hot,
    predict,
    save_checkpoint,
)
from .selection import (
    SelectionResult,
    SubjectEmbedding,
    aggregate_embedding,
    divergence_matrix,
    greedy_min_distance_subset,
    mds_coordinates,
    select_by_percentile,
    select_sources,
)
from .synth import SynthConfig, generate, stub_embed

__version__ = "0.1.0"
