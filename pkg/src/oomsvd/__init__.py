"""Out-of-memory truncated SVD by power iteration over in-process ranks."""

from .comm import CommGroup, CommStats
from .errors import (
    CapacityError,
    CollectiveError,
    CollectiveTimeout,
    ConfigError,
    DegenerateInputError,
    DegreeTwoError,
    LeaseError,
    NumericError,
    OomSvdError,
    ShapeError,
    StoreError,
)
from .gram import GramResult, dist_gram, gram_matvec, gram_tasks
from .linalg import (
    CsrMatrix,
    SvdFactors,
    frobenius_error,
    matmul,
    matvec,
    matvec_transposed,
    norm2,
    normalize,
)
from .partition import (
    BatchPlan,
    MemoryEstimate,
    OomAssessment,
    PartitionPlan,
    choose_partition,
    classify_oom,
    estimate_memory,
    plan_batches,
)
from .power import (
    IterationReport,
    SvdConfig,
    dist_compute_v,
    residual_gram_apply,
    svd_1d,
    svd_truncated_dense,
    svd_truncated_sparse,
)
from .solver import SvdRun, truncated_svd
from .store import BlockId, FileHostTier, MemoryHostTier, StoreStats, TieredStore

__version__ = "0.1.0"
