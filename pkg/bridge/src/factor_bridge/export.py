"""Export operations: embeddings.json and detections.jsonl."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .config import BridgeConfig, BridgeError
from .interchange_out import detection_document, embedding_document
from .models import Detector, TextEncoder, load_backend

log = logging.getLogger("factor_bridge")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def export_embeddings(
    config: BridgeConfig,
    out_path: str | Path,
    encoder: TextEncoder | None = None,
) -> dict:
    """Write one embedding row per attribute and per category.

    Attribute names are encoded verbatim; category names are rendered
    through the prompt template first, matching how the detector sees them.
    Config validation happens at BridgeConfig construction, before any
    model is loaded.
    """
    if encoder is None:
        encoder, _ = load_backend(config)
    attr_rows = encoder.encode(list(config.attributes))
    cls_rows = encoder.encode(
        [config.prompt_template.format(c) for c in config.categories]
    )
    attr_rows = np.asarray(attr_rows, dtype=np.float64)
    cls_rows = np.asarray(cls_rows, dtype=np.float64)
    payload = embedding_document(
        attribute_names=config.attributes,
        attribute_embeddings=attr_rows,
        category_names=config.categories,
        category_embeddings=cls_rows,
        metadata={"dim": int(attr_rows.shape[1]), "encoder": encoder.identity},
    )
    out_path = Path(out_path)
    out_path.write_bytes(payload + b"\n")
    return {
        "out": str(out_path),
        "dim": int(attr_rows.shape[1]),
        "attributes": len(config.attributes),
        "categories": len(config.categories),
        "encoder": encoder.identity,
    }


def _list_images(images_dir: Path) -> list[Path]:
    if not images_dir.is_dir():
        raise BridgeError(f"images: {images_dir} is not a directory")
    paths = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise BridgeError(f"images: no image files found in {images_dir}")
    return paths


def export_detections(
    images_dir: str | Path,
    config: BridgeConfig,
    out_path: str | Path,
    view: str,
    detector: Detector | None = None,
) -> dict:
    """Run the detector over a directory and write one DetectionSet per line.

    `view` comes from the directory's role in the pipeline (original vs
    counterfactual), never from the pixels. Per-image failures are logged
    and skipped; the returned summary counts them. Output line order
    follows sorted file names so repeated runs are byte-identical.
    """
    paths = _list_images(Path(images_dir))
    if detector is None:
        _, detector = load_backend(config)
    prompt = config.prompt()
    lines: list[bytes] = []
    exported = failed = 0
    for path in paths:
        try:
            with PILImage.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
            regions = detector.detect(pixels, prompt, len(config.categories))
            lines.append(
                detection_document(path.stem, view, config.categories, regions)
            )
            exported += 1
        except BridgeError:
            raise
        except Exception as e:
            log.warning("skipping %s: %s", path.name, e)
            failed += 1
    if exported == 0:
        raise BridgeError(f"images: every image in {images_dir} failed")
    out_path = Path(out_path)
    out_path.write_bytes(b"\n".join(lines) + b"\n")
    if failed:
        log.warning("skipped %d image(s) with per-image failures", failed)
    return {
        "out": str(out_path),
        "view": view,
        "exported": exported,
        "skipped": failed,
    }
