"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from factor.interchange import (
    BoundingBox,
    DetectionSet,
    RegionPrediction,
    TextEmbeddingTable,
)


def random_box(rng: np.random.Generator) -> BoundingBox:
    x1, y1 = rng.uniform(0.0, 0.8, size=2)
    w, h = rng.uniform(0.05, 0.19, size=2)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def random_region(
    rng: np.random.Generator, n_categories: int, dim: int, box: BoundingBox | None = None
) -> RegionPrediction:
    logits = rng.normal(0.0, 2.0, size=n_categories)
    return RegionPrediction(
        box=box if box is not None else random_box(rng),
        logits=logits,
        feature=rng.normal(0.0, 1.0, size=dim),
        score=float(rng.uniform(0.0, 1.0)),
        label=int(np.argmax(logits)),
    )


def random_detection_set(
    rng: np.random.Generator,
    image_id: str = "img-0",
    n_regions: int | None = None,
    n_categories: int = 3,
    dim: int = 5,
    view: str = "original",
) -> DetectionSet:
    if n_regions is None:
        n_regions = int(rng.integers(0, 6))
    return DetectionSet(
        image_id=image_id,
        regions=tuple(random_region(rng, n_categories, dim) for _ in range(n_regions)),
        categories=tuple(f"cat_{c}" for c in range(n_categories)),
        view=view,
    )


def random_embedding_table(
    rng: np.random.Generator, n_attributes: int = 6, n_categories: int = 3, dim: int = 5
) -> TextEmbeddingTable:
    return TextEmbeddingTable(
        dim=dim,
        attribute_names=tuple(f"attr_{a}" for a in range(n_attributes)),
        attribute_embeddings=rng.normal(0.0, 1.0, size=(n_attributes, dim)),
        category_names=tuple(f"cat_{c}" for c in range(n_categories)),
        category_embeddings=rng.normal(0.0, 1.0, size=(n_categories, dim)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_experiment_report():
    """One shared run of the default synthetic experiment (the oracle run)."""
    from factor.synthetic import ExperimentConfig, run_experiment

    return run_experiment(ExperimentConfig())
