"""Invariance-guided calibration core.

For each aligned region pair the engine measures prediction discrepancy
(KL divergence of softmax distributions), gates it against the image mean
(CSS), scores region-attribute alignment (ASS) and attribute-category
relevance (ACR), fuses the three into a per-category correction term, and
applies it as a logit penalty plus a confidence down-weighting.

Two probability views coexist by design: softmax over logits feeds the KL
discrepancy measure, while per-class sigmoid produces detection outputs.
Both derive from the single logit vector shipped across the interchange
boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .interchange import (
    CalibrationConfig,
    DetectionSet,
    RegionPrediction,
    TextEmbeddingTable,
)
from .pairing import align


def sigmoid(x):
    """Numerically stable elementwise logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def region_probabilities(logits: np.ndarray) -> np.ndarray:
    """Softmax over category logits; used only for the KL discrepancy."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray, epsilon: float = 1e-12) -> float:
    """Forward KL divergence sum_c p(c) log(p(c)/q(c)) with clamped logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    pc = np.clip(p, epsilon, 1.0)
    qc = np.clip(q, epsilon, 1.0)
    value = float(np.sum(p * (np.log(pc) - np.log(qc))))
    return max(value, 0.0)


def css(kl_values: np.ndarray) -> np.ndarray:
    """Sigmoid-gated, mean-centered KL over the paired regions of one image."""
    kl_values = np.asarray(kl_values, dtype=np.float64)
    if kl_values.size == 0:
        return np.empty(0)
    return sigmoid(kl_values - kl_values.mean())


def ass(feature: np.ndarray, attribute_embeddings: np.ndarray) -> np.ndarray:
    """Region-attribute alignment: sigmoid of the raw inner products."""
    feature = np.asarray(feature, dtype=np.float64)
    attribute_embeddings = np.asarray(attribute_embeddings, dtype=np.float64)
    if attribute_embeddings.ndim != 2 or attribute_embeddings.shape[1] != feature.shape[0]:
        raise ValueError(
            f"dimension mismatch: feature has {feature.shape[0]} dims, "
            f"embeddings are {attribute_embeddings.shape}"
        )
    return sigmoid(attribute_embeddings @ feature)


@dataclass(frozen=True)
class AcrMatrix:
    """Attribute-category relevance; image-independent, cached per table."""

    values: np.ndarray  # |A| x C, entries in (0, 1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def acr(embeddings: TextEmbeddingTable) -> AcrMatrix:
    """Compute the relevance matrix sigmoid(T_attr @ T_cls^T) once."""
    return AcrMatrix(
        sigmoid(embeddings.attribute_embeddings @ embeddings.category_embeddings.T)
    )


def correction_term(
    ass_values: np.ndarray, acr_matrix: AcrMatrix, css_value: float
) -> np.ndarray:
    """Attribute-averaged product ASS * ACR * CSS per category."""
    ass_values = np.asarray(ass_values, dtype=np.float64)
    if ass_values.shape[0] != acr_matrix.values.shape[0]:
        raise ValueError(
            f"dimension mismatch: {ass_values.shape[0]} attribute scores vs "
            f"{acr_matrix.values.shape[0]} relevance rows"
        )
    return (ass_values @ acr_matrix.values) * (css_value / ass_values.shape[0])


@dataclass(frozen=True)
class SensitivityScores:
    """Per-region diagnostic chain: raw KL, gate, and fused correction."""

    kl: float
    css: float
    ass: np.ndarray  # length |A|
    delta: np.ndarray  # length C


@dataclass(frozen=True)
class CalibratedRegion:
    base: RegionPrediction
    adjusted_logits: np.ndarray
    adjusted_probs: np.ndarray
    label: int
    delta_bar: float
    adjusted_score: float
    scores: SensitivityScores | None  # absent iff the region was unpaired


def calibrate_region(
    region: RegionPrediction, scores: SensitivityScores, lam: float
) -> CalibratedRegion:
    """Penalize unstable categories in the logits and refine the confidence."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    delta = np.asarray(scores.delta, dtype=np.float64)
    if delta.shape != region.logits.shape:
        raise ValueError(
            f"dimension mismatch: {delta.shape[0]} correction entries for "
            f"{region.logits.shape[0]} logits"
        )
    adjusted_logits = region.logits - lam * delta
    adjusted_probs = sigmoid(adjusted_logits)
    delta_bar = float(adjusted_probs @ delta)
    return CalibratedRegion(
        base=region,
        adjusted_logits=adjusted_logits,
        adjusted_probs=adjusted_probs,
        label=int(np.argmax(adjusted_probs)),
        delta_bar=delta_bar,
        adjusted_score=region.score * math.exp(-delta_bar),
        scores=scores,
    )


def passthrough_region(region: RegionPrediction) -> CalibratedRegion:
    """Unpaired regions bypass calibration: correction identically zero."""
    return CalibratedRegion(
        base=region,
        adjusted_logits=region.logits,
        adjusted_probs=sigmoid(region.logits),
        label=int(np.argmax(region.logits)),
        delta_bar=0.0,
        adjusted_score=region.score,
        scores=None,
    )


@dataclass(frozen=True)
class ImageCalibrationStats:
    image_id: str
    n_original: int
    n_counterfactual: int
    n_pairs: int
    n_passthrough: int
    mu: float | None  # mean KL over pairs; None when no pairs formed


@dataclass(frozen=True)
class CalibrationOutcome:
    detections: DetectionSet
    regions: tuple[CalibratedRegion, ...]  # same order as the input regions
    stats: ImageCalibrationStats


def calibrate_image_detailed(
    original: DetectionSet,
    counterfactual: DetectionSet,
    embeddings: TextEmbeddingTable,
    config: CalibrationConfig,
    acr_matrix: AcrMatrix | None = None,
) -> CalibrationOutcome:
    """Full pipeline for one image: align, score, fuse, calibrate."""
    if original.view != "original":
        raise ValueError(f"first argument must have view=original, got {original.view}")
    if len(original.categories) != len(embeddings.category_names):
        raise ValueError(
            f"vocabulary mismatch: {len(original.categories)} detection "
            f"categories vs {len(embeddings.category_names)} embedding rows"
        )
    for r in original.regions:
        if r.feature.shape[0] != embeddings.dim:
            raise ValueError(
                f"feature dimension {r.feature.shape[0]} does not match "
                f"embedding dim {embeddings.dim}"
            )
    if acr_matrix is None:
        acr_matrix = acr(embeddings)

    pairing = align(original, counterfactual, config.iou_threshold)
    paired = {i: pair for i, pair in zip(pairing.pair_indices, pairing.pairs)}

    mu = None
    per_pair_scores: dict[int, SensitivityScores] = {}
    if paired:
        kl_values = {}
        for i, pair in paired.items():
            p = region_probabilities(pair.original.logits)
            q = region_probabilities(pair.counterfactual.logits)
            kl_values[i] = kl_divergence(p, q, config.epsilon)
        mu = float(np.mean(list(kl_values.values())))
        for i, pair in paired.items():
            css_i = float(sigmoid(kl_values[i] - mu))
            ass_i = ass(pair.original.feature, embeddings.attribute_embeddings)
            delta_i = correction_term(ass_i, acr_matrix, css_i)
            per_pair_scores[i] = SensitivityScores(
                kl=kl_values[i], css=css_i, ass=ass_i, delta=delta_i
            )

    calibrated = []
    for i, region in enumerate(original.regions):
        if i in per_pair_scores:
            calibrated.append(calibrate_region(region, per_pair_scores[i], config.lam))
        else:
            calibrated.append(passthrough_region(region))

    out_regions = tuple(
        RegionPrediction(
            box=c.base.box,
            logits=c.adjusted_logits,
            feature=c.base.feature,
            score=c.adjusted_score,
            label=c.label,
        )
        for c in calibrated
    )
    detections = DetectionSet(
        image_id=original.image_id,
        regions=out_regions,
        categories=original.categories,
        view="original",
    )
    stats = ImageCalibrationStats(
        image_id=original.image_id,
        n_original=len(original.regions),
        n_counterfactual=len(counterfactual.regions),
        n_pairs=len(paired),
        n_passthrough=len(original.regions) - len(paired),
        mu=mu,
    )
    return CalibrationOutcome(
        detections=detections, regions=tuple(calibrated), stats=stats
    )


def calibrate_image(
    original: DetectionSet,
    counterfactual: DetectionSet,
    embeddings: TextEmbeddingTable,
    config: CalibrationConfig,
    acr_matrix: AcrMatrix | None = None,
) -> DetectionSet:
    """Calibrated detections for one image (see calibrate_image_detailed)."""
    return calibrate_image_detailed(
        original, counterfactual, embeddings, config, acr_matrix
    ).detections
