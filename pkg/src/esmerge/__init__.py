"""Checkpoint merging in activation-aware principal subspaces."""

from .decomp import (
    EsdFactors,
    SvdTruncFactors,
    activation_shift,
    empirical_error,
    energy_retention,
    esd,
    expected_error_esd,
    expected_error_svd,
    rank_budget,
    svd_truncate,
)
from .linalg import EigFactors, SvdFactors, pca_basis, sym_eig, thin_svd, whiten
from .merge import (
    AlphaSearch,
    FixedAlpha,
    MergeConfig,
    MergedUpdate,
    MergeResult,
    concat_factors,
    merge_layer,
    merge_model,
    merge_updates,
    orthogonalize_pair,
    reconstruct,
    select_alpha,
)
from .scaling import (
    LayerRules,
    LayerType,
    ScaleReport,
    Variant,
    apply_variant,
    classify_layers,
    inter_dim_coeffs,
    inter_layer_coeffs,
    inter_task_coeffs,
    norm_order,
)
from .tensorstore import (
    ContainerError,
    DuplicateTensorError,
    MalformedHeaderError,
    StructureMismatchError,
    TaskUpdate,
    TensorMap,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    average_non_matrix,
    compute_task_update,
    load_tensor_map,
    save_tensor_map,
)
from .verify import (
    OracleReport,
    check_esd_theorem,
    check_procrustes,
    check_svd_theorem,
    compare_esd_svd,
    linear_cka,
    run_suite,
)

__version__ = "0.1.0"
