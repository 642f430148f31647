"""Self-contained spurious-correlation testbed.

Scenes are rendered as colored rectangles (causal signal: object color)
under global appearance fields (non-causal signal: brightness, contrast,
blur, noise, texture, haze levels). A mock detector scores each object
region from local image statistics; a configurable fraction of its logits
leaks in from the estimated non-causal levels, reproducing a detector that
learned spurious attribute-category correlations. The whole pipeline
(perturb, pair, calibrate, evaluate) can then be exercised end to end with
exact ground truth and no external weights.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .calibration import acr, calibrate_image_detailed, sigmoid
from .evaluation import GroundTruthSet, evaluate
from .interchange import (
    VIEW_COUNTERFACTUAL,
    VIEW_ORIGINAL,
    BoundingBox,
    CalibrationConfig,
    DetectionSet,
    Image,
    RegionPrediction,
    TextEmbeddingTable,
    TransformParams,
)
from .transforms import (
    compose_counterfactual,
    t_blur,
    t_brightness,
    t_contrast,
    t_noise,
    t_texture,
    t_weather,
)

ATTRIBUTE_NAMES = ("brightness", "contrast", "blur", "noise", "texture", "weather")
N_ATTRIBUTES = len(ATTRIBUTE_NAMES)


class GenerationError(Exception):
    """Scene layout could not be produced within the retry budget."""


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 96
    n_objects_min: int = 2
    n_objects_max: int = 4
    n_categories: int = 4
    severity: float = 0.0  # 0 = clean domain, 1 = strongest shift
    max_layout_retries: int = 200

    def __post_init__(self):
        if self.image_size < 64:
            raise ValueError("image_size must be >= 64")
        if not 1 <= self.n_objects_min <= self.n_objects_max <= 6:
            raise ValueError("object count range must lie in [1, 6]")
        if self.n_categories < 2:
            raise ValueError("need at least 2 categories")
        if not 0 <= self.severity <= 1:
            raise ValueError("severity must be in [0, 1]")


@dataclass(frozen=True)
class SyntheticScene:
    image: Image
    truth: GroundTruthSet
    attribute_intensity: np.ndarray  # global field levels, length 6, in [0, 1]
    object_specs: tuple[tuple[int, np.ndarray], ...]  # (category, color signature)
    # per-object local attribute exposure, length 6 each; objects with high
    # exposure are the ones a spurious-reliant detector gets wrong
    object_exposures: tuple[np.ndarray, ...] = ()


@dataclass(frozen=True)
class MockDetectorParams:
    causal_weights: np.ndarray  # C x C, maps color-match evidence to logits
    spurious_weights: np.ndarray  # C x |A|
    spurious_strength: float = 0.0
    localization_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.spurious_strength < 0:
            raise ValueError("spurious_strength must be >= 0")
        if self.localization_noise < 0:
            raise ValueError("localization_noise must be >= 0")


def category_palette(n_categories: int) -> np.ndarray:
    """Distinct saturated RGB colors, one row per category, values in [0, 255]."""
    import colorsys

    colors = []
    for c in range(n_categories):
        r, g, b = colorsys.hsv_to_rgb(c / n_categories, 0.85, 0.9)
        colors.append([r * 255.0, g * 255.0, b * 255.0])
    return np.asarray(colors)


def _scene_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0x5CE4E, seed]))


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Render one scene deterministically from (config, seed)."""
    rng = _scene_rng(seed)
    size = config.image_size
    palette = category_palette(config.n_categories)

    background = float(rng.integers(95, 135))
    pixels = np.full((size, size, 3), background)

    n_objects = int(rng.integers(config.n_objects_min, config.n_objects_max + 1))
    placed: list[tuple[int, int, int, int]] = []
    specs = []
    gt_boxes = []
    for _ in range(n_objects):
        for attempt in range(config.max_layout_retries):
            w = int(rng.integers(16, 30))
            h = int(rng.integers(16, 30))
            x = int(rng.integers(2, size - w - 2))
            y = int(rng.integers(2, size - h - 2))
            if all(
                x + w <= px or px + pw <= x or y + h <= py or py + ph <= y
                for px, py, pw, ph in placed
            ):
                break
        else:
            raise GenerationError(
                f"could not place object after {config.max_layout_retries} retries"
            )
        placed.append((x, y, w, h))
        category = int(rng.integers(config.n_categories))
        shade = rng.uniform(0.92, 1.08)
        color = np.clip(palette[category] * shade, 0, 255)
        pixels[y : y + h, x : x + w] = color
        # horizontal stripes give each object interior texture, so blur and
        # texture overlays have something to destroy
        stripe_rows = (np.arange(h) // 3) % 2 == 1
        pixels[y : y + h][stripe_rows, x : x + w] = color * 0.75
        # darker border gives each object a shape edge
        edge = np.clip(color * 0.6, 0, 255)
        pixels[y, x : x + w] = edge
        pixels[y + h - 1, x : x + w] = edge
        pixels[y : y + h, x] = edge
        pixels[y : y + h, x + w - 1] = edge
        specs.append((category, color / 255.0))
        gt_boxes.append(
            (
                BoundingBox(x / size, y / size, (x + w) / size, (y + h) / size),
                category,
            )
        )

    # local attribute exposure: roughly half the objects sit under a strong
    # local appearance patch, the rest stay clean, so every scene mixes
    # spurious-exposed and robust regions
    exposures = []
    for x, y, w, h in placed:
        exposure = np.zeros(N_ATTRIBUTES)
        if config.severity > 0 and rng.random() < 0.55:
            active = rng.choice(N_ATTRIBUTES, size=int(rng.integers(1, 3)), replace=False)
            exposure[active] = config.severity * rng.uniform(0.6, 1.0, size=active.size)
        exposures.append(exposure)
        crop = pixels[y : y + h, x : x + w]
        pixels[y : y + h, x : x + w] = _apply_local_exposure(crop, exposure, rng)

    image = Image(np.clip(pixels, 0, 255).astype(np.uint8))

    if config.severity == 0:
        intensity = np.zeros(N_ATTRIBUTES)
    else:
        intensity = 0.3 * config.severity * rng.uniform(0.5, 1.0, size=N_ATTRIBUTES)
    image = _apply_attribute_fields(image, intensity, seed)

    image_id = f"scene-{seed:06d}"
    truth = GroundTruthSet(
        image_id=image_id,
        boxes=tuple(gt_boxes),
        difficult_flags=tuple(False for _ in gt_boxes),
    )
    return SyntheticScene(
        image=image,
        truth=truth,
        attribute_intensity=intensity,
        object_specs=tuple(specs),
        object_exposures=tuple(exposures),
    )


def _apply_local_exposure(
    crop: np.ndarray, exposure: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Apply attribute overlays to one object's pixel rectangle."""
    b, c, bl, n, t, w = (float(v) for v in exposure)
    out = crop.astype(np.float64)
    if b > 0:
        out = 255.0 * np.power(out / 255.0, 1.0 + 2.2 * b)
    if c > 0:
        out = 128.0 + (out - 128.0) * (1.0 - 0.7 * c)
    if bl > 0:
        smooth = np.stack(
            [_smooth3(_smooth3(out[:, :, ch])) for ch in range(3)], axis=2
        )
        mix = min(1.0, 1.3 * bl)
        out = out * (1.0 - mix) + smooth * mix
    if n > 0:
        # same noise on all channels so it survives the luma average
        out = out + rng.normal(0.0, 18.0 * n, size=out.shape[:2])[:, :, None]
    if t > 0:
        coarse = out[::2, ::2].repeat(2, axis=0).repeat(2, axis=1)
        coarse = coarse[: out.shape[0], : out.shape[1]]
        mix = min(1.0, 1.3 * t)
        out = out * (1.0 - mix) + coarse * mix
    if w > 0:
        out = (1.0 - 0.5 * w) * out + 0.5 * w * 255.0
    return np.clip(out, 0.0, 255.0)


def _apply_attribute_fields(
    image: Image, intensity: np.ndarray, seed: int
) -> Image:
    """Global appearance shift along the pointwise non-causal attributes.

    Blur and texture stay local-only: a global resampling field would erase
    the stripe pattern everywhere and with it the detector's ability to read
    per-region blur/texture levels.
    """
    b, c, _bl, n, _t, w = (float(v) for v in intensity)
    out = image
    if b > 0:
        out = t_brightness(out, 1.0 - 0.6 * b)
    if c > 0:
        out = t_contrast(out, 1.0 - 0.35 * c)
    if n > 0:
        out = t_noise(out, 4.0 * n, seed, image_id=f"scene-field-{seed}")
    if w > 0:
        out = t_weather(out, 0.35 * w)
    return out


# ---------------------------------------------------------------------------
# Non-causal attribute level estimation from local pixel statistics.

def _smooth3(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, 1, mode="edge")
    return (
        p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
        + p[1:-1, :-2] + p[1:-1, 1:-1] + p[1:-1, 2:]
        + p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
    ) / 9.0


def estimate_attribute_levels(
    crop: np.ndarray, expected_rgb: np.ndarray
) -> np.ndarray:
    """Rough per-region levels of the six non-causal attributes, each in [0, 1].

    Each level measures how far a local statistic has drifted from the value
    the region would show with a clean rendering of `expected_rgb` (the
    striped fill color the region appears closest to). Intentionally crude:
    the point is a detector-side measurement that responds monotonically to
    the appearance overlays, so that counterfactual perturbations move it.
    """
    expected_rgb = np.asarray(expected_rgb, dtype=np.float64)
    mean_rgb = crop.reshape(-1, 3).astype(np.float64).mean(axis=0)
    luma = crop.astype(np.float64).mean(axis=2)
    eps = 1e-9

    # clean expectations: mean luma, distance from mid-gray, saturation, and
    # the stripe pattern's vertical gradient / high-frequency residual energy
    luma_exp = expected_rgb.mean()
    gray_dist_exp = np.abs(expected_rgb - 128.0).mean()
    sat_exp = (expected_rgb.max() - expected_rgb.min()) / (expected_rgb.max() + eps)
    grad_exp = 0.10 * luma_exp
    resid_exp = 0.063 * luma_exp

    gray_dist = np.abs(mean_rgb - 128.0).mean()
    sat = (mean_rgb.max() - mean_rgb.min()) / (mean_rgb.max() + eps)
    grad_v = np.abs(np.diff(luma, axis=0)).mean() if luma.shape[0] > 1 else 0.0
    resid = np.abs(luma - _smooth3(luma)).mean()

    return np.clip(
        [
            (luma_exp - luma.mean()) / (0.6 * luma_exp + eps),  # darkening
            (gray_dist_exp - gray_dist) / (0.7 * gray_dist_exp + eps),  # flattening
            1.0 - grad_v / (grad_exp + eps),  # stripe edges smoothed away
            (resid - resid_exp) / 4.0,  # excess high-frequency residual
            1.0 - resid / (resid_exp + eps),  # fine detail lost
            (sat_exp - sat) / (0.7 * sat_exp + eps),  # haze desaturation
        ],
        0.0,
        1.0,
    )


def default_detector_params(
    n_categories: int,
    spurious_strength: float = 0.0,
    localization_noise: float = 0.015,
    seed: int = 0,
) -> MockDetectorParams:
    rng = np.random.default_rng(np.random.SeedSequence([0xDE7EC, seed]))
    causal = 15.0 * np.eye(n_categories)
    spurious = rng.uniform(-1.0, 1.0, size=(n_categories, N_ATTRIBUTES))
    return MockDetectorParams(
        causal_weights=causal,
        spurious_weights=spurious,
        spurious_strength=spurious_strength,
        localization_noise=localization_noise,
        seed=seed,
    )


def synthetic_embeddings(
    n_categories: int, spurious_weights: np.ndarray, affinity_gain: float = 2.0
) -> TextEmbeddingTable:
    """Embedding table with planted attribute-category affinities.

    Layout: dimensions [0, 6) form the attribute block, [6, 6+C) the
    category block. Attribute rows carry a unit direction in the attribute
    block plus affinity components (proportional to the detector's spurious
    weights) in the category block; category rows are unit vectors in the
    category block. The relevance matrix therefore peaks exactly where the
    mock detector leaks attribute signal.
    """
    dim = N_ATTRIBUTES + n_categories
    attr = np.zeros((N_ATTRIBUTES, dim))
    w = np.asarray(spurious_weights, dtype=np.float64)
    scale = np.abs(w).max()
    planted = affinity_gain * (w.T / scale if scale > 0 else w.T)
    for a in range(N_ATTRIBUTES):
        attr[a, a] = 4.0
        attr[a, N_ATTRIBUTES:] = planted[a]
    cls = np.zeros((n_categories, dim))
    for c in range(n_categories):
        cls[c, N_ATTRIBUTES + c] = 1.0
    return TextEmbeddingTable(
        dim=dim,
        attribute_names=ATTRIBUTE_NAMES,
        attribute_embeddings=attr,
        category_names=tuple(f"category_{c}" for c in range(n_categories)),
        category_embeddings=cls,
    )


def _detect_rng(seed: int, image_id: str, view: str) -> np.random.Generator:
    digest = hashlib.blake2b(f"{image_id}/{view}".encode(), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "little")])
    )


def mock_detect(
    scene: SyntheticScene,
    params: MockDetectorParams,
    embeddings: TextEmbeddingTable,
    image: Image | None = None,
    view: str = VIEW_ORIGINAL,
) -> DetectionSet:
    """Score each ground-truth region of a scene from image statistics.

    Region locations come from the generator metadata (jittered by
    localization_noise); there is no proposal search. Pass `image` to detect
    on a perturbed view of the scene while keeping the same region set.
    """
    img = scene.image if image is None else image
    pixels = img.pixels.astype(np.float64)
    size_y, size_x = pixels.shape[:2]
    n_categories = len(embeddings.category_names)
    palette = category_palette(n_categories) / 255.0
    rng = _detect_rng(params.seed, scene.truth.image_id, view)

    regions = []
    for gt_box, _category in scene.truth.boxes:
        coords = np.array([gt_box.x1, gt_box.y1, gt_box.x2, gt_box.y2])
        if params.localization_noise > 0:
            coords = coords + rng.normal(0, params.localization_noise, size=4)
        x1, y1, x2, y2 = np.clip(coords, 0.0, 1.0)
        if x2 - x1 < 2 / size_x:
            x1, x2 = gt_box.x1, gt_box.x2
        if y2 - y1 < 2 / size_y:
            y1, y2 = gt_box.y1, gt_box.y2
        box = BoundingBox(float(x1), float(y1), float(x2), float(y2))

        px1, px2 = int(x1 * size_x), max(int(x1 * size_x) + 1, int(np.ceil(x2 * size_x)))
        py1, py2 = int(y1 * size_y), max(int(y1 * size_y) + 1, int(np.ceil(y2 * size_y)))
        # trim the darker border so statistics reflect the striped interior
        if py2 - py1 > 6:
            py1, py2 = py1 + 2, py2 - 2
        if px2 - px1 > 6:
            px1, px2 = px1 + 2, px2 - 2
        crop = pixels[py1:py2, px1:px2]

        # chromaticity is nearly invariant to the global appearance fields,
        # making the color pathway genuinely causal: it survives the
        # counterfactual perturbation while the leaked attribute levels move
        mean_rgb = crop.reshape(-1, 3).mean(axis=0)
        chroma = mean_rgb / (mean_rgb.sum() + 1e-9)
        palette_chroma = palette / palette.sum(axis=1, keepdims=True)
        color_evidence = 0.08 - np.sum((chroma[None, :] - palette_chroma) ** 2, axis=1)
        # 0.875 is the stripe-averaged fill brightness relative to the base color
        expected_rgb = 255.0 * 0.875 * palette[np.argmax(color_evidence)]
        levels = estimate_attribute_levels(crop, expected_rgb)
        logits = params.causal_weights @ color_evidence
        logits = logits + params.spurious_strength * (params.spurious_weights @ levels)

        feature = np.zeros(embeddings.dim)
        feature[:N_ATTRIBUTES] = 2.0 * levels - 1.0

        probs = sigmoid(logits)
        regions.append(
            RegionPrediction(
                box=box,
                logits=logits,
                feature=feature,
                score=float(np.max(probs)),
                label=int(np.argmax(logits)),
            )
        )

    return DetectionSet(
        image_id=scene.truth.image_id,
        regions=tuple(regions),
        categories=embeddings.category_names,
        view=view,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    n_scenes: int = 200
    base_seed: int = 0
    scene: SceneConfig = field(default_factory=lambda: SceneConfig(severity=0.8))
    spurious_strength: float = 9.0
    localization_noise: float = 0.015
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    lambda_grid: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9, 1.1)


@dataclass(frozen=True)
class ExperimentReport:
    baseline_map50: float
    calibrated_map50: float
    lambda_sweep: tuple[tuple[float, float], ...]  # (lambda, mAP50)
    n_scenes: int
    n_regions: int
    n_pairs: int
    n_passthrough: int

    def to_dict(self) -> dict:
        return {
            "baseline_map50": self.baseline_map50,
            "calibrated_map50": self.calibrated_map50,
            "lambda_sweep": [list(point) for point in self.lambda_sweep],
            "n_scenes": self.n_scenes,
            "n_regions": self.n_regions,
            "n_pairs": self.n_pairs,
            "n_passthrough": self.n_passthrough,
        }


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Baseline-vs-calibrated comparison over seeded scenes, plus a λ sweep."""
    params = default_detector_params(
        config.scene.n_categories,
        spurious_strength=config.spurious_strength,
        localization_noise=config.localization_noise,
        seed=config.base_seed,
    )
    embeddings = synthetic_embeddings(
        config.scene.n_categories, params.spurious_weights
    )
    acr_matrix = acr(embeddings)

    truths = []
    baselines = []
    pairs_inputs = []  # (original, counterfactual) per scene
    n_pairs = 0
    n_passthrough = 0
    for i in range(config.n_scenes):
        scene = generate_scene(config.scene, seed=config.base_seed + i)
        original = mock_detect(scene, params, embeddings, view=VIEW_ORIGINAL)
        cf_image = compose_counterfactual(
            scene.image,
            config.calibration.transform_params,
            image_id=scene.truth.image_id,
        )
        counterfactual = mock_detect(
            scene, params, embeddings, image=cf_image, view=VIEW_COUNTERFACTUAL
        )
        truths.append(scene.truth)
        baselines.append(original)
        pairs_inputs.append((original, counterfactual))

    def calibrate_all(lam: float) -> list[DetectionSet]:
        nonlocal n_pairs, n_passthrough
        cal_config = replace(config.calibration, lam=lam)
        outputs = []
        n_pairs = n_passthrough = 0
        for original, counterfactual in pairs_inputs:
            outcome = calibrate_image_detailed(
                original, counterfactual, embeddings, cal_config, acr_matrix
            )
            outputs.append(outcome.detections)
            n_pairs += outcome.stats.n_pairs
            n_passthrough += outcome.stats.n_passthrough
        return outputs

    baseline_map = evaluate(baselines, truths).map50
    calibrated_map = evaluate(calibrate_all(config.calibration.lam), truths).map50

    sweep = tuple(
        (lam, evaluate(calibrate_all(lam), truths).map50)
        for lam in config.lambda_grid
    )
    # restore counters for the reported (default lambda) run
    calibrate_all(config.calibration.lam)

    return ExperimentReport(
        baseline_map50=baseline_map,
        calibrated_map50=calibrated_map,
        lambda_sweep=sweep,
        n_scenes=config.n_scenes,
        n_regions=sum(len(d.regions) for d in baselines),
        n_pairs=n_pairs,
        n_passthrough=n_passthrough,
    )
