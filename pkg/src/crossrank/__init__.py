"""Cross-modality retrieval toolkit.

Pixel-space channel-alignment augmentations, differentiable ranking via
regularized permutahedron projection, a ranking-aware retrieval loss with
analytic gradients, the CMC/mAP/mINP evaluation protocol, and a toy
training harness tying them together.
"""

from .imgproc import (
    MaaConfig,
    MaaSample,
    PatchRect,
    Simplex3Weights,
    apply_maa,
    cross_channel_cutmix,
    expand_infrared,
    sample_cutmix_patch,
    sample_simplex3,
    spectrum_jitter,
    weighted_grayscale,
)
from .losses import (
    EmbeddingBatch,
    LossReport,
    cmr_loss,
    cosine_distance_row,
    footrule,
    id_loss,
    target_ranks,
    total_loss,
)
from .metrics import (
    EvalConfig,
    ManifestRecord,
    MetricsReport,
    RetrievalManifest,
    evaluate,
    evaluate_repeated,
    query_metrics,
    rank_gallery,
    sample_gallery_shot,
)
from .softrank import (
    SoftRankParams,
    hard_rank,
    isotonic_regression_l2,
    soft_rank,
    soft_rank_jacobian,
    soft_rank_vjp,
)
from .toytrain import (
    SyntheticSpec,
    TinyModel,
    TrainConfig,
    generate_synthetic,
    gradcheck_suite,
    pk_sample,
    train,
)

__version__ = "0.1.0"
