"""Detector bridge: export real-model detections and text embeddings.

Writes the calibration engine's interchange file formats (detections.jsonl,
embeddings.json) from any backend implementing the TextEncoder / Detector
interfaces. The engine itself is never imported; the JSON documents are the
only contract between the two packages.
"""

from .config import BridgeConfig, BridgeError, load_config
from .export import export_detections, export_embeddings
from .models import Detector, StubDetector, StubEncoder, TextEncoder

__version__ = "0.1.0"
