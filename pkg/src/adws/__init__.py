"""Online-adaptive unsupervised image anomaly detection.

Per test image: select visually similar defect-free training images (SIFT
keypoint matching or cosine similarity over pooled embeddings), fit a
normality model (multivariate Gaussian or one-class SVM) to the subset's
deep feature vectors, and flag locations whose deviation exceeds an
adaptive threshold derived from that same subset.
"""

from .backbone import (
    Backbone,
    extract_feature_map,
    global_pool,
    load_backbone,
    make_stub_backbone,
    stub_metadata,
)
from .errors import AdwsError, DataError, ModelError
from .ingest import Image, bilinear_resize, decode_image, load_image, scan_dataset
from .kdtree import DescriptorIndex, brute_force_knn2
from .metrics import auroc, confusion_metrics
from .normality import (
    MvgModel,
    OcsvmModel,
    ScoreMap,
    Threshold,
    adaptive_threshold,
    fit_mvg,
    fit_ocsvm,
    mahalanobis,
    ocsvm_score,
    rbf_kernel,
    score_map,
)
from .pipeline import AnomalyReport, DetectorConfig, EvalReport, detect, evaluate
from .selection import (
    FeatureDictionary,
    SelectionResult,
    build_dictionary,
    cosine_similarity,
    fsp,
    load_dictionary,
    ratio_test,
    save_dictionary,
    select_subset,
)
from .sift import Keypoint, SiftConfig, SiftFeatureSet, sift_features

__version__ = "0.1.0"

__all__ = [
    "AdwsError",
    "AnomalyReport",
    "Backbone",
    "DataError",
    "DescriptorIndex",
    "DetectorConfig",
    "EvalReport",
    "FeatureDictionary",
    "Image",
    "Keypoint",
    "ModelError",
    "MvgModel",
    "OcsvmModel",
    "ScoreMap",
    "SelectionResult",
    "SiftConfig",
    "SiftFeatureSet",
    "Threshold",
    "adaptive_threshold",
    "auroc",
    "bilinear_resize",
    "brute_force_knn2",
    "build_dictionary",
    "confusion_metrics",
    "cosine_similarity",
    "decode_image",
    "detect",
    "evaluate",
    "extract_feature_map",
    "fit_mvg",
    "fit_ocsvm",
    "fsp",
    "global_pool",
    "load_backbone",
    "load_dictionary",
    "load_image",
    "mahalanobis",
    "make_stub_backbone",
    "ocsvm_score",
    "ratio_test",
    "rbf_kernel",
    "save_dictionary",
    "scan_dataset",
    "score_map",
    "select_subset",
    "sift_features",
    "stub_metadata",
    "__version__",
]
