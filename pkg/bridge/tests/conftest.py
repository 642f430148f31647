import numpy as np
import pytest
from PIL import Image as PILImage


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "real_weights: needs a real checkpoint (set FACTOR_BRIDGE_CHECKPOINT)",
    )


@pytest.fixture
def image_dir(tmp_path):
    """Directory with three deterministic RGB PNGs."""
    d = tmp_path / "images"
    d.mkdir()
    rng = np.random.default_rng(7)
    for name in ("img_a", "img_b", "img_c"):
        pixels = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        PILImage.fromarray(pixels).save(d / f"{name}.png")
    return d
