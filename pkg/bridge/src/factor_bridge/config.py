"""Bridge configuration: model selection, vocabulary, and prompt template."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DEFAULT_ATTRIBUTES = (
    "brightness",
    "contrast",
    "blur",
    "noise",
    "texture",
    "weather",
)

# one placeholder per class; rendered terms are joined with a single space,
# e.g. ("cat", "dog") -> "cat. dog."
DEFAULT_PROMPT_TEMPLATE = "{}."


class BridgeError(Exception):
    """User-facing bridge failure (bad config, unloadable model, bad input)."""


@dataclass(frozen=True)
class BridgeConfig:
    categories: tuple[str, ...]
    checkpoint: str = "stub"  # "stub" or a model identifier / checkpoint path
    device: str = "cpu"
    confidence_threshold: float = 0.25
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    attributes: tuple[str, ...] = DEFAULT_ATTRIBUTES

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.categories:
            raise BridgeError("categories: must be non-empty")
        if not self.attributes:
            raise BridgeError("attributes: must be non-empty")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise BridgeError(
                f"confidence_threshold: {self.confidence_threshold} outside (0, 1)"
            )
        if "{}" not in self.prompt_template:
            raise BridgeError("prompt_template: must contain a '{}' placeholder")

    def prompt(self) -> str:
        """Render the detection prompt from the category list."""
        return " ".join(self.prompt_template.format(c) for c in self.categories)


def load_config(path: str | Path) -> BridgeConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise BridgeError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise BridgeError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise BridgeError("config: top-level value must be an object")
    if "categories" not in doc:
        raise BridgeError("config: missing required field 'categories'")
    defaults = {
        "checkpoint": "stub",
        "device": "cpu",
        "confidence_threshold": 0.25,
        "prompt_template": DEFAULT_PROMPT_TEMPLATE,
        "attributes": list(DEFAULT_ATTRIBUTES),
    }
    unknown = set(doc) - set(defaults) - {"categories"}
    if unknown:
        raise BridgeError(f"config: unknown fields {sorted(unknown)}")
    merged = {**defaults, **doc}
    return BridgeConfig(
        categories=tuple(merged["categories"]),
        checkpoint=str(merged["checkpoint"]),
        device=str(merged["device"]),
        confidence_threshold=float(merged["confidence_threshold"]),
        prompt_template=str(merged["prompt_template"]),
        attributes=tuple(merged["attributes"]),
    )
