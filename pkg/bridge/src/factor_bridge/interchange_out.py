"""Canonical JSON emitter for the engine's interchange formats.

The bridge writes — never reads — the engine's documents, so only the
emitting half of the format lives here. The rendering rules mirror the
engine's canonical form: stable key order, floats with 17 significant
digits (integer-valued floats as "x.0") so values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from .config import BridgeError

DETECTIONS_SCHEMA = "factor.detections.v1"
EMBEDDINGS_SCHEMA = "factor.embeddings.v1"

VIEW_ORIGINAL = "original"
VIEW_COUNTERFACTUAL = "counterfactual"


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise BridgeError("numeric field: non-finite value")
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


def _check_region(region: dict, n_categories: int, idx: int) -> dict:
    """Validate one exported region against the engine's invariants."""
    box = [float(v) for v in region["box"]]
    if len(box) != 4:
        raise BridgeError(f"regions[{idx}].box: expected 4 coordinates")
    x1, y1, x2, y2 = box
    if not all(0.0 <= v <= 1.0 for v in box):
        raise BridgeError(f"regions[{idx}].box: coordinate outside [0, 1]")
    if not (x1 < x2 and y1 < y2):
        raise BridgeError(f"regions[{idx}].box: degenerate box")
    logits = [float(v) for v in region["logits"]]
    feature = [float(v) for v in region["feature"]]
    if len(logits) != n_categories:
        raise BridgeError(
            f"regions[{idx}].logits: {len(logits)} values for "
            f"{n_categories} categories"
        )
    if not feature:
        raise BridgeError(f"regions[{idx}].feature: empty vector")
    score = float(region["score"])
    if not 0.0 <= score <= 1.0:
        raise BridgeError(f"regions[{idx}].score: {score} outside [0, 1]")
    label = int(region["label"])
    if not 0 <= label < n_categories:
        raise BridgeError(f"regions[{idx}].label: {label} out of range")
    return {
        "box": box,
        "logits": logits,
        "feature": feature,
        "score": score,
        "label": label,
    }


def detection_document(
    image_id: str,
    view: str,
    categories: Sequence[str],
    regions: Sequence[dict],
) -> bytes:
    """Render one detection set as a canonical single-line document.

    Each region is a dict with keys box (4 normalized corner coordinates),
    logits (raw pre-sigmoid, one per category), feature, score, label.
    """
    if view not in (VIEW_ORIGINAL, VIEW_COUNTERFACTUAL):
        raise BridgeError(f"view: unknown value {view!r}")
    if not categories:
        raise BridgeError("categories: must be non-empty")
    doc = {
        "schema": DETECTIONS_SCHEMA,
        "image_id": image_id,
        "view": view,
        "categories": list(categories),
        "regions": [
            _check_region(r, len(categories), i) for i, r in enumerate(regions)
        ],
    }
    return _emit(doc).encode("utf-8")


def embedding_document(
    attribute_names: Sequence[str],
    attribute_embeddings: np.ndarray,
    category_names: Sequence[str],
    category_embeddings: np.ndarray,
    metadata: dict | None = None,
) -> bytes:
    """Render an embedding table document.

    `metadata` (encoder identity, dimensionality) rides along as an extra
    top-level field; the engine's parser ignores unknown optional fields.
    """
    attr = np.asarray(attribute_embeddings, dtype=np.float64)
    cls = np.asarray(category_embeddings, dtype=np.float64)
    if attr.ndim != 2 or cls.ndim != 2 or attr.shape[1] != cls.shape[1]:
        raise BridgeError("embeddings: attribute/category rows disagree on dim")
    if attr.shape[0] != len(attribute_names):
        raise BridgeError("attribute_embeddings: one row per attribute required")
    if cls.shape[0] != len(category_names):
        raise BridgeError("category_embeddings: one row per category required")
    if not (np.all(np.isfinite(attr)) and np.all(np.isfinite(cls))):
        raise BridgeError("embeddings: non-finite value")
    doc = {
        "schema": EMBEDDINGS_SCHEMA,
        "dim": int(attr.shape[1]),
        "attribute_names": list(attribute_names),
        "attribute_embeddings": [[float(v) for v in row] for row in attr],
        "category_names": list(category_names),
        "category_embeddings": [[float(v) for v in row] for row in cls],
    }
    if metadata is not None:
        doc["metadata"] = metadata
    return _emit(doc).encode("utf-8")
