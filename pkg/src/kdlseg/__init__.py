"""Kernel dictionary learning for texture-based binary image segmentation.

Per-class dictionaries D = Phi(Y) A are trained with kernel K-SVD over
22-dimensional texture descriptors, test pixels are sparse-coded with
kernel orthogonal matching pursuit, and the class with the smaller
feature-space reconstruction error wins. A correlation-based greedy
selector reduces each class to its most representative, least redundant
and most class-separating feature vectors before training.
"""

from .classify import (
    SegmentationResult,
    classify_batch,
    classify_vector,
    segment_slice,
    segment_volume,
)
from .dictionary import (
    KernelDictionary,
    TrainParams,
    TrainReport,
    init_dictionary,
    kksvd_iteration,
    load_model,
    save_model,
    train,
)
from .features import (
    FeatureScaler,
    FeatureSet,
    apply_scaler,
    extract_features,
    feature_vector,
    fit_scaler,
    load_features,
    save_features,
)
from .fileio import FormatError
from .imaging import (
    compute_brain_mask,
    gaussian_filter,
    load_pgm,
    load_volume,
    normalize_intensity,
    save_pgm,
    save_volume,
)
from .kernels import KernelSpec, gram, kernel_eval, kernel_row, linear_kernel, rbf_kernel
from .metrics import ConfusionCounts, all_metrics, confusion
from .phantom import PhantomSpec, TextureParams, generate_phantom
from .selection import pearson, select_samples, select_samples_oracle
from .sparse import SparseCode, komp, komp_batch, reconstruction_error2

__version__ = "0.1.0"
