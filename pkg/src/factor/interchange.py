"""Canonical data model and serialization boundary.

Detections, embeddings, and configuration cross process (and language)
boundaries as line-structured JSON documents. Serialization is canonical:
stable key order, floats rendered with 17 significant digits so every value
round-trips bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DETECTIONS_SCHEMA = "factor.detections.v1"
EMBEDDINGS_SCHEMA = "factor.embeddings.v1"
CONFIG_SCHEMA = "factor.config.v1"
GROUNDTRUTH_SCHEMA = "factor.groundtruth.v1"

VIEW_ORIGINAL = "original"
VIEW_COUNTERFACTUAL = "counterfactual"


class InterchangeError(Exception):
    """Base class for serialization-boundary failures."""


class MalformedDocumentError(InterchangeError):
    """Document is not parseable as a schema document."""


class VersionMismatchError(InterchangeError):
    """Document declares an unknown or incompatible schema version."""


class InvariantViolationError(InterchangeError):
    """A domain-type invariant does not hold; message names the field."""


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x 3 8-bit raster; the unit of counterfactual intervention."""

    pixels: np.ndarray  # uint8, shape (height, width, 3)

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvariantViolationError(
                f"pixels: expected shape (H, W, 3), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvariantViolationError("pixels: empty image")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise InvariantViolationError("pixels: channel value outside [0, 255]")
            arr = arr.astype(np.uint8)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with normalized corner coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise InvariantViolationError(f"box.{name}: not a finite number")
            if not 0.0 <= v <= 1.0:
                raise InvariantViolationError(f"box.{name}: {v} outside [0, 1]")
        if not self.x1 < self.x2:
            raise InvariantViolationError("box: x1 must be < x2")
        if not self.y1 < self.y2:
            raise InvariantViolationError("box: y1 must be < y2")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True, eq=False)
class RegionPrediction:
    """One detector proposal: box, per-category logits, feature, confidence."""

    box: BoundingBox
    logits: np.ndarray  # float64, length C
    feature: np.ndarray  # float64, length D
    score: float
    label: int

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        feature = np.asarray(self.feature, dtype=np.float64)
        if logits.ndim != 1 or logits.size == 0:
            raise InvariantViolationError("logits: expected non-empty 1-D vector")
        if feature.ndim != 1 or feature.size == 0:
            raise InvariantViolationError("feature: expected non-empty 1-D vector")
        if not np.all(np.isfinite(logits)):
            raise InvariantViolationError("logits: non-finite value")
        if not np.all(np.isfinite(feature)):
            raise InvariantViolationError("feature: non-finite value")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvariantViolationError(f"score: {self.score} outside [0, 1]")
        if not 0 <= self.label < logits.size:
            raise InvariantViolationError(
                f"label: {self.label} outside [0, {logits.size})"
            )
        logits.setflags(write=False)
        feature.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "feature", feature)

    def __eq__(self, other):
        if not isinstance(other, RegionPrediction):
            return NotImplemented
        return (
            self.box == other.box
            and np.array_equal(self.logits, other.logits)
            and np.array_equal(self.feature, other.feature)
            and self.score == other.score
            and self.label == other.label
        )


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """All proposals for one image plus the category vocabulary."""

    image_id: str
    regions: tuple[RegionPrediction, ...]
    categories: tuple[str, ...]
    view: str

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.view not in (VIEW_ORIGINAL, VIEW_COUNTERFACTUAL):
            raise InvariantViolationError(f"view: unknown value {self.view!r}")
        if len(self.categories) == 0:
            raise InvariantViolationError("categories: must be non-empty")
        for i, r in enumerate(self.regions):
            if r.logits.size != len(self.categories):
                raise InvariantViolationError(
                    f"regions[{i}].logits: length mismatch "
                    f"({r.logits.size} logits for {len(self.categories)} categories)"
                )

    def __eq__(self, other):
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.view == other.view
            and self.categories == other.categories
            and len(self.regions) == len(other.regions)
            and all(a == b for a, b in zip(self.regions, other.regions))
        )


@dataclass(frozen=True, eq=False)
class TextEmbeddingTable:
    """Attribute and category embeddings in one shared D-dimensional space."""

    dim: int
    attribute_names: tuple[str, ...]
    attribute_embeddings: np.ndarray  # |A| x D
    category_names: tuple[str, ...]
    category_embeddings: np.ndarray  # C x D

    def __post_init__(self):
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        object.__setattr__(self, "category_names", tuple(self.category_names))
        attr = np.asarray(self.attribute_embeddings, dtype=np.float64)
        cls = np.asarray(self.category_embeddings, dtype=np.float64)
        if self.dim < 1:
            raise InvariantViolationError("dim: must be positive")
        if attr.shape != (len(self.attribute_names), self.dim):
            raise InvariantViolationError(
                f"attribute_embeddings: shape {attr.shape} does not match "
                f"({len(self.attribute_names)}, {self.dim})"
            )
        if cls.shape != (len(self.category_names), self.dim):
            raise InvariantViolationError(
                f"category_embeddings: shape {cls.shape} does not match "
                f"({len(self.category_names)}, {self.dim})"
            )
        if not (np.all(np.isfinite(attr)) and np.all(np.isfinite(cls))):
            raise InvariantViolationError("embeddings: non-finite value")
        attr.setflags(write=False)
        cls.setflags(write=False)
        object.__setattr__(self, "attribute_embeddings", attr)
        object.__setattr__(self, "category_embeddings", cls)

    def __eq__(self, other):
        if not isinstance(other, TextEmbeddingTable):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.attribute_names == other.attribute_names
            and self.category_names == other.category_names
            and np.array_equal(self.attribute_embeddings, other.attribute_embeddings)
            and np.array_equal(self.category_embeddings, other.category_embeddings)
        )


@dataclass(frozen=True)
class TransformParams:
    """Fixed intensities for the six counterfactual operators.

    noise_seed keeps the additive-noise step reproducible; it is combined
    with the image identifier so images in a dataset stay decorrelated.
    """

    gamma_prime: float = 0.3
    alpha: float = 0.9
    kernel_size: int = 3
    sigma_noise: float = 2.0
    theta: float = 0.95
    beta: float = 0.1
    noise_seed: int = 0

    def __post_init__(self):
        if not self.gamma_prime > 0:
            raise InvariantViolationError("gamma_prime: must be > 0")
        if not 0 < self.alpha < 1:
            raise InvariantViolationError("alpha: must be in (0, 1)")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvariantViolationError("kernel_size: must be odd and >= 1")
        if self.sigma_noise < 0:
            raise InvariantViolationError("sigma_noise: must be >= 0")
        if not 0 < self.theta <= 1:
            raise InvariantViolationError("theta: must be in (0, 1]")
        if not 0 <= self.beta < 1:
            raise InvariantViolationError("beta: must be in [0, 1)")
        if not 0 <= self.noise_seed < 2**64:
            raise InvariantViolationError("noise_seed: must fit in 64 unsigned bits")


@dataclass(frozen=True)
class CalibrationConfig:
    """Engine hyperparameters; defaults follow the fixed published setting."""

    lam: float = 0.5
    iou_threshold: float = 0.3
    transform_params: TransformParams = field(default_factory=TransformParams)
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.lam < 0:
            raise InvariantViolationError("lambda: must be >= 0")
        if not 0 < self.iou_threshold <= 1:
            raise InvariantViolationError("iou_threshold: must be in (0, 1]")
        if not self.epsilon > 0:
            raise InvariantViolationError("epsilon: must be > 0")


# ---------------------------------------------------------------------------
# Canonical JSON rendering.
#
# json.dumps does not let us control float formatting, so a small emitter
# renders documents directly. Key order is the insertion order of the dicts
# built below, which makes repeated serialization byte-identical.

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise InvariantViolationError("numeric field: non-finite value")
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return format(x, ".17g")


def _emit(value) -> str:
    if isinstance(value, dict):
        items = ",".join(f"{json.dumps(k)}:{_emit(v)}" for k, v in value.items())
        return "{" + items + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_emit(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt_float(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if value is None:
        return "null"
    raise TypeError(f"cannot serialize {type(value)!r}")


def _region_to_doc(r: RegionPrediction) -> dict:
    return {
        "box": [r.box.x1, r.box.y1, r.box.x2, r.box.y2],
        "logits": [float(v) for v in r.logits],
        "feature": [float(v) for v in r.feature],
        "score": float(r.score),
        "label": int(r.label),
    }


def serialize_detection_set(det: DetectionSet) -> bytes:
    """Render one DetectionSet as a canonical single-line JSON document."""
    doc = {
        "schema": DETECTIONS_SCHEMA,
        "image_id": det.image_id,
        "view": det.view,
        "categories": list(det.categories),
        "regions": [_region_to_doc(r) for r in det.regions],
    }
    return _emit(doc).encode("utf-8")


def _parse_document(raw: bytes | str, expected_schema: str) -> dict:
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedDocumentError(f"not valid UTF-8: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedDocumentError("top-level value is not an object")
    schema = doc.get("schema")
    if schema != expected_schema:
        raise VersionMismatchError(
            f"expected schema {expected_schema!r}, got {schema!r}"
        )
    return doc


def _require(doc: dict, key: str, kind):
    if key not in doc:
        raise MalformedDocumentError(f"missing required field {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise MalformedDocumentError(f"field {key!r}: unexpected type")
    return value


def _region_from_doc(obj: dict, idx: int) -> RegionPrediction:
    if not isinstance(obj, dict):
        raise MalformedDocumentError(f"regions[{idx}]: not an object")
    box = _require(obj, "box", list)
    if len(box) != 4:
        raise MalformedDocumentError(f"regions[{idx}].box: expected 4 coordinates")
    return RegionPrediction(
        box=BoundingBox(*[float(v) for v in box]),
        logits=np.asarray(_require(obj, "logits", list), dtype=np.float64),
        feature=np.asarray(_require(obj, "feature", list), dtype=np.float64),
        score=float(_require(obj, "score", (int, float))),
        label=int(_require(obj, "label", int)),
    )


def deserialize_detection_set(raw: bytes | str) -> DetectionSet:
    """Parse a detections document; unknown optional fields are ignored."""
    doc = _parse_document(raw, DETECTIONS_SCHEMA)
    regions = _require(doc, "regions", list)
    return DetectionSet(
        image_id=_require(doc, "image_id", str),
        view=_require(doc, "view", str),
        categories=tuple(_require(doc, "categories", list)),
        regions=tuple(_region_from_doc(r, i) for i, r in enumerate(regions)),
    )


def serialize_embedding_table(table: TextEmbeddingTable) -> bytes:
    doc = {
        "schema": EMBEDDINGS_SCHEMA,
        "dim": table.dim,
        "attribute_names": list(table.attribute_names),
        "attribute_embeddings": [[float(v) for v in row] for row in table.attribute_embeddings],
        "category_names": list(table.category_names),
        "category_embeddings": [[float(v) for v in row] for row in table.category_embeddings],
    }
    return _emit(doc).encode("utf-8")


def deserialize_embedding_table(raw: bytes | str) -> TextEmbeddingTable:
    doc = _parse_document(raw, EMBEDDINGS_SCHEMA)
    return TextEmbeddingTable(
        dim=_require(doc, "dim", int),
        attribute_names=tuple(_require(doc, "attribute_names", list)),
        attribute_embeddings=np.asarray(
            _require(doc, "attribute_embeddings", list), dtype=np.float64
        ),
        category_names=tuple(_require(doc, "category_names", list)),
        category_embeddings=np.asarray(
            _require(doc, "category_embeddings", list), dtype=np.float64
        ),
    )


def serialize_config(config: CalibrationConfig) -> bytes:
    tp = config.transform_params
    doc = {
        "schema": CONFIG_SCHEMA,
        "lambda": config.lam,
        "iou_threshold": config.iou_threshold,
        "epsilon": config.epsilon,
        "transform_params": {
            "gamma_prime": tp.gamma_prime,
            "alpha": tp.alpha,
            "kernel_size": tp.kernel_size,
            "sigma_noise": tp.sigma_noise,
            "theta": tp.theta,
            "beta": tp.beta,
            "noise_seed": tp.noise_seed,
        },
    }
    return _emit(doc).encode("utf-8")


def deserialize_config(raw: bytes | str) -> CalibrationConfig:
    """Parse a config document; absent fields take their defaults."""
    doc = _parse_document(raw, CONFIG_SCHEMA)
    tp_doc = doc.get("transform_params", {})
    if not isinstance(tp_doc, dict):
        raise MalformedDocumentError("field 'transform_params': unexpected type")
    tp_defaults = TransformParams()
    tp = TransformParams(
        gamma_prime=float(tp_doc.get("gamma_prime", tp_defaults.gamma_prime)),
        alpha=float(tp_doc.get("alpha", tp_defaults.alpha)),
        kernel_size=int(tp_doc.get("kernel_size", tp_defaults.kernel_size)),
        sigma_noise=float(tp_doc.get("sigma_noise", tp_defaults.sigma_noise)),
        theta=float(tp_doc.get("theta", tp_defaults.theta)),
        beta=float(tp_doc.get("beta", tp_defaults.beta)),
        noise_seed=int(tp_doc.get("noise_seed", tp_defaults.noise_seed)),
    )
    defaults = CalibrationConfig()
    return CalibrationConfig(
        lam=float(doc.get("lambda", defaults.lam)),
        iou_threshold=float(doc.get("iou_threshold", defaults.iou_threshold)),
        epsilon=float(doc.get("epsilon", defaults.epsilon)),
        transform_params=tp,
    )
