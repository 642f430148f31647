"""Encoder / detector interfaces plus deterministic stub backends.

Real inference (Grounding DINO via `transformers`) is isolated behind two
small interfaces so every export path is testable without weights:

- TextEncoder.encode(texts) -> (N, D) float64 rows in one shared space.
- Detector.detect(pixels, prompt, n_categories) -> list of region dicts
  with keys box / logits / feature / score / label.

Region feature choice (f_i) for the real backend: the decoder query
embedding of the kept proposal, i.e. the last decoder hidden state row for
that query (`outputs.last_hidden_state[0, query_index]`). It is the tensor
the detection head scores against the text embeddings, so it lives in the
same space as the exported text rows. Logits are exported raw, pre-sigmoid;
the engine owns both probability views.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .config import BridgeConfig, BridgeError


class TextEncoder(Protocol):
    identity: str

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class Detector(Protocol):
    def detect(
        self, pixels: np.ndarray, prompt: str, n_categories: int
    ) -> list[dict]: ...


def _hash_seed(*parts: str) -> int:
    digest = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


class StubEncoder:
    """Deterministic text encoder: each text hashes to a fixed unit row."""

    def __init__(self, dim: int = 32):
        if dim < 1:
            raise BridgeError("stub encoder dim: must be positive")
        self.dim = dim
        self.identity = f"stub-encoder-d{dim}"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            rng = np.random.default_rng(_hash_seed("text", text))
            row = rng.standard_normal(self.dim)
            rows[i] = row / np.linalg.norm(row)
        return rows


class StubDetector:
    """Deterministic detector built from image statistics.

    Proposes one region per image quadrant; logits are derived from the
    quadrant's mean channel intensities hashed with the prompt, so outputs
    depend only on pixel bytes and configuration. Scores are the sigmoid of
    the maximum logit, filtered at the configured confidence threshold.
    """

    def __init__(self, confidence_threshold: float = 0.25, feature_dim: int = 32):
        self.confidence_threshold = confidence_threshold
        self.feature_dim = feature_dim

    def detect(
        self, pixels: np.ndarray, prompt: str, n_categories: int
    ) -> list[dict]:
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise BridgeError(f"image: expected (H, W, 3) pixels, got {arr.shape}")
        h, w = arr.shape[:2]
        quadrants = [
            (0.02, 0.02, 0.50, 0.50),
            (0.50, 0.02, 0.98, 0.50),
            (0.02, 0.50, 0.50, 0.98),
            (0.50, 0.50, 0.98, 0.98),
        ]
        regions = []
        for x1, y1, x2, y2 in quadrants:
            crop = arr[int(y1 * h) : int(y2 * h), int(x1 * w) : int(x2 * w)]
            means = crop.mean(axis=(0, 1)) / 255.0
            seed = _hash_seed(
                "quad", prompt, ",".join(f"{m:.6f}" for m in means)
            )
            rng = np.random.default_rng(seed)
            logits = rng.normal(0.0, 1.0, size=n_categories) + 3.0 * means.sum() - 2.0
            feature = rng.standard_normal(self.feature_dim)
            label = int(np.argmax(logits))
            score = float(1.0 / (1.0 + np.exp(-logits[label])))
            if score < self.confidence_threshold:
                continue
            regions.append(
                {
                    "box": [x1, y1, x2, y2],
                    "logits": [float(v) for v in logits],
                    "feature": [float(v) for v in feature],
                    "score": score,
                    "label": label,
                }
            )
        return regions


class _RealBackend:
    """Lazy Grounding DINO wrapper; imports torch/transformers on first use."""

    def __init__(self, config: BridgeConfig):
        try:
            import torch
            from transformers import AutoModelForZeroShotObjectDetection, AutoProcessor
        except ImportError as e:
            raise BridgeError(
                "real-model backend requires the [model] extra "
                f"(torch + transformers): {e}"
            ) from e
        try:
            self._torch = torch
            self.processor = AutoProcessor.from_pretrained(config.checkpoint)
            self.model = AutoModelForZeroShotObjectDetection.from_pretrained(
                config.checkpoint
            )
        except Exception as e:
            raise BridgeError(
                f"cannot load checkpoint {config.checkpoint!r}: {e}"
            ) from e
        self.model.to(config.device)
        self.model.eval()
        self.config = config
        self.identity = f"grounding-dino:{config.checkpoint}"

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        torch = self._torch
        rows = []
        with torch.no_grad():
            for text in texts:
                inputs = self.processor(text=text, return_tensors="pt").to(
                    self.config.device
                )
                hidden = self.model.model.text_backbone(**inputs).last_hidden_state
                # mean-pool the token span (excluding special tokens)
                rows.append(hidden[0, 1:-1].mean(dim=0).cpu().numpy())
        return np.asarray(rows, dtype=np.float64)

    def detect(
        self, pixels: np.ndarray, prompt: str, n_categories: int
    ) -> list[dict]:
        torch = self._torch
        from PIL import Image as PILImage

        image = PILImage.fromarray(np.asarray(pixels, dtype=np.uint8))
        inputs = self.processor(
            images=image, text=prompt, return_tensors="pt"
        ).to(self.config.device)
        with torch.no_grad():
            outputs = self.model(**inputs)
        # per-query token logits pooled into per-category spans
        token_logits = outputs.logits[0].cpu()  # (Q, T)
        boxes = outputs.pred_boxes[0].cpu()  # (Q, 4) cxcywh, normalized
        queries = outputs.last_hidden_state[0].cpu()  # (Q, D) -> f_i
        spans = self._category_token_spans(inputs, n_categories)
        regions = []
        for q in range(token_logits.shape[0]):
            logits = [float(token_logits[q, s].max()) for s in spans]
            label = int(np.argmax(logits))
            score = float(1.0 / (1.0 + np.exp(-logits[label])))
            if score < self.config.confidence_threshold:
                continue
            cx, cy, bw, bh = (float(v) for v in boxes[q])
            x1 = min(max(cx - bw / 2, 0.0), 1.0)
            y1 = min(max(cy - bh / 2, 0.0), 1.0)
            x2 = min(max(cx + bw / 2, 0.0), 1.0)
            y2 = min(max(cy + bh / 2, 0.0), 1.0)
            if not (x1 < x2 and y1 < y2):
                continue
            regions.append(
                {
                    "box": [x1, y1, x2, y2],
                    "logits": logits,
                    "feature": [float(v) for v in queries[q]],
                    "score": score,
                    "label": label,
                }
            )
        return regions

    def _category_token_spans(self, inputs, n_categories: int) -> list[list[int]]:
        """Map each category to its token indices inside the prompt."""
        ids = inputs["input_ids"][0].tolist()
        sep = self.processor.tokenizer.convert_tokens_to_ids(".")
        spans, current = [], []
        for idx, tok in enumerate(ids[1:-1], start=1):
            if tok == sep:
                if current:
                    spans.append(current)
                current = []
            else:
                current.append(idx)
        if current:
            spans.append(current)
        if len(spans) != n_categories:
            raise BridgeError(
                f"prompt tokenization produced {len(spans)} category spans "
                f"for {n_categories} categories"
            )
        return spans


def load_backend(config: BridgeConfig) -> tuple[TextEncoder, Detector]:
    """Resolve (encoder, detector) for the configured checkpoint.

    checkpoint == "stub" selects the deterministic test backends; anything
    else is treated as a Grounding DINO checkpoint identifier or path.
    """
    if config.checkpoint == "stub":
        return StubEncoder(), StubDetector(config.confidence_threshold)
    backend = _RealBackend(config)
    return backend, backend
