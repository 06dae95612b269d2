"""Semi-supervised alignment of two embedding spaces.

A linear teacher fit on a small paired set supplies target affinities;
alignment layers are then trained on unpaired batches with a
transport-based divergence whose gradient is available in closed form.
"""

from .divergences import (
    DivergenceSpec,
    SigLIPParams,
    cka_div,
    cka_from_kernels,
    divergence_value_and_grad,
    generalized_infonce,
    siglip_loss,
)
from .embeddings import (
    AffinityMatrix,
    Batch,
    EmbeddingMatrix,
    PairedDataset,
    UnpairedPool,
    center_rows,
    cosine_affinity,
    l2_normalize_rows,
    load_embeddings,
    row_softmax,
    sample_batch,
    write_embeddings,
)
from .entropic_ot import (
    OTValue,
    TransportPlan,
    entropic_ot_value,
    fd_gradient,
    grad_cost_profile,
    klot,
    klot_gradient,
    klot_value_and_grad,
    sinkhorn,
)
from .errors import (
    DataError,
    DegenerateRowError,
    DivergenceError,
    FormatError,
    ParameterError,
    SingularityError,
    SotalignError,
    UndefinedCKAError,
)
from .evaluation import RecallReport, retrieval_recall, zero_shot_classify
from .linear_teachers import (
    ContrastiveConfig,
    LinearTeacher,
    fit_cca,
    fit_linear_contrastive,
    fit_procrustes,
    fit_teacher,
    load_teacher,
    save_teacher,
    teacher_affinity,
)
from .shift_metrics import (
    ShiftReport,
    circular_wasserstein_1d,
    mutual_knn,
    sliced_wasserstein,
    spherical_sliced_wasserstein,
    total_ssw,
    wasserstein_1d,
)
from .synth import SynthConfig, SynthData, generate_platonic
from .trainer import (
    Aligner,
    LossBreakdown,
    TrainConfig,
    TrainReport,
    affinity_backward,
    cosine_lr,
    lion_step,
    load_aligner,
    save_aligner,
    train_sotalign,
    train_step,
    write_train_report,
)

__version__ = "0.1.0"
