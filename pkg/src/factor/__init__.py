"""Training-free test-time calibration for open-vocabulary detectors.

The engine perturbs test images along non-causal appearance attributes,
pairs region predictions between the original and perturbed views, and
suppresses attribute-dependent predictions via logit and confidence
calibration. A synthetic spurious-correlation testbed exercises the full
pipeline without external weights.
"""

from .calibration import (
    AcrMatrix,
    CalibratedRegion,
    SensitivityScores,
    acr,
    ass,
    calibrate_image,
    calibrate_image_detailed,
    calibrate_region,
    correction_term,
    css,
    kl_divergence,
    region_probabilities,
)
from .evaluation import EvalReport, GroundTruthSet, evaluate
from .interchange import (
    BoundingBox,
    CalibrationConfig,
    DetectionSet,
    Image,
    RegionPrediction,
    TextEmbeddingTable,
    TransformParams,
    deserialize_detection_set,
    serialize_detection_set,
)
from .pairing import PairedRegion, PairingResult, align, iou
from .transforms import PixelDiffReport, compose_counterfactual, pixel_diff_report

__version__ = "0.1.0"
