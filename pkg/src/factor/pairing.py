"""Spatial alignment of original and counterfactual region predictions.

Candidate pairs are accepted greedily in descending IoU order with
one-to-one exclusivity; pairs under the IoU gate are discarded. Ties break
by (original index, counterfactual index) so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .interchange import BoundingBox, DetectionSet, RegionPrediction


@dataclass(frozen=True)
class PairedRegion:
    """A spatially matched (original, counterfactual) prediction pair."""

    original: RegionPrediction
    counterfactual: RegionPrediction
    iou: float


@dataclass(frozen=True)
class PairingResult:
    pairs: tuple[PairedRegion, ...]
    unmatched_original: tuple[RegionPrediction, ...]
    unmatched_counterfactual: tuple[RegionPrediction, ...]
    # original-list indices of each pair, for order-preserving reassembly
    pair_indices: tuple[int, ...] = ()


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two normalized boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def align(
    original: DetectionSet, counterfactual: DetectionSet, threshold: float
) -> PairingResult:
    """Greedy one-to-one IoU matching between the two views of one image."""
    if original.image_id != counterfactual.image_id:
        raise ValueError(
            f"image_id mismatch: {original.image_id!r} vs "
            f"{counterfactual.image_id!r}"
        )
    if original.categories != counterfactual.categories:
        raise ValueError("category lists differ between views")
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")

    candidates = []
    for i, r in enumerate(original.regions):
        for j, s in enumerate(counterfactual.regions):
            v = iou(r.box, s.box)
            if v >= threshold:
                candidates.append((-v, i, j))
    candidates.sort()

    used_orig: set[int] = set()
    used_cf: set[int] = set()
    matches: dict[int, tuple[int, float]] = {}
    for neg_v, i, j in candidates:
        if i in used_orig or j in used_cf:
            continue
        used_orig.add(i)
        used_cf.add(j)
        matches[i] = (j, -neg_v)

    pairs = []
    pair_indices = []
    for i in sorted(matches):
        j, v = matches[i]
        pairs.append(
            PairedRegion(
                original=original.regions[i],
                counterfactual=counterfactual.regions[j],
                iou=v,
            )
        )
        pair_indices.append(i)

    return PairingResult(
        pairs=tuple(pairs),
        unmatched_original=tuple(
            r for i, r in enumerate(original.regions) if i not in used_orig
        ),
        unmatched_counterfactual=tuple(
            s for j, s in enumerate(counterfactual.regions) if j not in used_cf
        ),
        pair_indices=tuple(pair_indices),
    )
