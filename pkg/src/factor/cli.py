"""Command-line pipeline: perturb, calibrate, evaluate, sweep, metrics.

Exit codes: 0 success, 1 input/validation error, 2 internal invariant
violation. All subcommands are deterministic: the same argv and input files
produce byte-identical outputs. FACTOR_LOG overrides the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .calibration import acr, calibrate_image_detailed
from .evaluation import deserialize_ground_truth, evaluate, pr_curve
from .interchange import (
    CalibrationConfig,
    Image,
    InterchangeError,
    TransformParams,
    deserialize_config,
    deserialize_detection_set,
    deserialize_embedding_table,
    serialize_detection_set,
)
from .synthetic import ExperimentConfig, SceneConfig, run_experiment
from .transforms import ParameterError, compose_counterfactual, pixel_diff_report

log = logging.getLogger("factor")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


class InputError(Exception):
    """User-facing input or validation failure (exit code 1)."""


def read_png(path: Path) -> Image:
    with PILImage.open(path) as im:
        return Image(np.asarray(im.convert("RGB")))


def write_png(path: Path, image: Image) -> None:
    PILImage.fromarray(np.asarray(image.pixels)).save(path, format="PNG")


def _load_config(path: str | None, seed: int | None) -> CalibrationConfig:
    if path is None:
        config = CalibrationConfig()
    else:
        try:
            config = deserialize_config(Path(path).read_bytes())
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e}") from e
    if seed is not None:
        config = dataclasses.replace(
            config,
            transform_params=dataclasses.replace(
                config.transform_params, noise_seed=seed
            ),
        )
    return config


def _config_echo(config: CalibrationConfig) -> dict:
    tp = config.transform_params
    return {
        "lambda": config.lam,
        "iou_threshold": config.iou_threshold,
        "epsilon": config.epsilon,
        "transform_params": dataclasses.asdict(tp),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_perturb(args) -> int:
    src = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _load_config(args.params, args.seed)

    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise InputError(f"no PNG files in {src}")
    elif src.is_file():
        files = [src]
    else:
        raise InputError(f"input path {src} does not exist")

    reports = {}
    for path in files:
        image = read_png(path)
        cf = compose_counterfactual(image, config.transform_params, image_id=path.name)
        write_png(out_dir / path.name, cf)
        reports[path.name] = dataclasses.asdict(pixel_diff_report(image, cf))
        log.info("perturbed %s", path.name)

    _write_json(
        out_dir / "diff_report.json",
        {"config": _config_echo(config), "images": reports},
    )
    return EXIT_OK


def _read_jsonl(path: str):
    try:
        lines = Path(path).read_bytes().splitlines()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    return [line for line in lines if line.strip()]


def cmd_calibrate(args) -> int:
    config = _load_config(args.config, args.seed)
    try:
        embeddings = deserialize_embedding_table(Path(args.emb).read_bytes())
    except OSError as e:
        raise InputError(f"cannot read {args.emb}: {e}") from e

    originals = [deserialize_detection_set(line) for line in _read_jsonl(args.orig)]
    counterfactuals = {
        d.image_id: d
        for d in (deserialize_detection_set(line) for line in _read_jsonl(args.cf))
    }
    acr_matrix = acr(embeddings)

    out_lines = []
    stats = []
    for original in originals:
        if original.image_id not in counterfactuals:
            raise InputError(
                f"no counterfactual detections for image {original.image_id!r}"
            )
        outcome = calibrate_image_detailed(
            original,
            counterfactuals[original.image_id],
            embeddings,
            config,
            acr_matrix,
        )
        out_lines.append(serialize_detection_set(outcome.detections))
        stats.append(dataclasses.asdict(outcome.stats))

    Path(args.out).write_bytes(b"\n".join(out_lines) + b"\n")
    if args.stats:
        n_passthrough = sum(s["n_passthrough"] for s in stats)
        _write_json(
            Path(args.stats),
            {
                "config": _config_echo(config),
                "images": stats,
                "total_pairs": sum(s["n_pairs"] for s in stats),
                "total_passthrough": n_passthrough,
            },
        )
    log.info("calibrated %d images", len(originals))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    detections = [deserialize_detection_set(line) for line in _read_jsonl(args.det)]
    truth = [deserialize_ground_truth(line) for line in _read_jsonl(args.gt)]
    report = evaluate(detections, truth)
    payload = {
        "map50": report.map50,
        "per_category_ap50": list(report.per_category_ap50),
        "counts": [dataclasses.asdict(c) for c in report.counts],
    }
    if args.out:
        _write_json(Path(args.out), payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _experiment_config(path: str | None, seed: int | None) -> ExperimentConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as e:
            raise InputError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise InputError(f"experiment config is not valid JSON: {e}") from e
    scene = SceneConfig(
        image_size=doc.get("image_size", 96),
        n_objects_min=doc.get("n_objects_min", 2),
        n_objects_max=doc.get("n_objects_max", 4),
        n_categories=doc.get("n_categories", 4),
        severity=doc.get("severity", 0.8),
    )
    defaults = ExperimentConfig()
    return ExperimentConfig(
        n_scenes=doc.get("n_scenes", defaults.n_scenes),
        base_seed=seed if seed is not None else doc.get("base_seed", 0),
        scene=scene,
        spurious_strength=doc.get("spurious_strength", defaults.spurious_strength),
        localization_noise=doc.get(
            "localization_noise", defaults.localization_noise
        ),
        lambda_grid=tuple(doc.get("lambda_grid", defaults.lambda_grid)),
    )


def cmd_sweep(args) -> int:
    config = _experiment_config(args.config, args.seed)
    report = run_experiment(config)
    payload = {
        "config": {
            "n_scenes": config.n_scenes,
            "base_seed": config.base_seed,
            "severity": config.scene.severity,
            "n_categories": config.scene.n_categories,
            "spurious_strength": config.spurious_strength,
            "lambda_grid": list(config.lambda_grid),
        },
        "report": report.to_dict(),
    }
    _write_json(Path(args.out), payload)
    log.info(
        "baseline mAP50=%.4f calibrated mAP50=%.4f",
        report.baseline_map50,
        report.calibrated_map50,
    )
    if args.emit_plots:
        _emit_plots(Path(args.emit_plots), config, report)
    return EXIT_OK


def _emit_plots(plot_dir: Path, config: ExperimentConfig, report) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plot_dir.mkdir(parents=True, exist_ok=True)

    lams = [point[0] for point in report.lambda_sweep]
    maps = [point[1] for point in report.lambda_sweep]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(lams, maps, marker="o", label="calibrated")
    ax.axhline(report.baseline_map50, linestyle="--", color="gray", label="baseline")
    ax.set_xlabel("adaptation strength")
    ax.set_ylabel("mAP50")
    ax.legend()
    fig.tight_layout()
    fig.savefig(plot_dir / "lambda_sensitivity.svg")
    plt.close(fig)

    # PR curves per category from a fresh default-lambda run
    from .synthetic import (
        default_detector_params,
        generate_scene,
        mock_detect,
        synthetic_embeddings,
    )

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
    truths, baselines, calibrated = [], [], []
    for i in range(config.n_scenes):
        scene = generate_scene(config.scene, seed=config.base_seed + i)
        original = mock_detect(scene, params, embeddings)
        cf_image = compose_counterfactual(
            scene.image,
            config.calibration.transform_params,
            image_id=scene.truth.image_id,
        )
        counterfactual = mock_detect(
            scene, params, embeddings, image=cf_image, view="counterfactual"
        )
        truths.append(scene.truth)
        baselines.append(original)
        calibrated.append(
            calibrate_image_detailed(
                original, counterfactual, embeddings, config.calibration, acr_matrix
            ).detections
        )

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for c in range(config.scene.n_categories):
        for dets, style, tag in ((baselines, "--", "base"), (calibrated, "-", "cal")):
            recall, precision = pr_curve(dets, truths, c)
            if recall.size:
                ax.plot(recall, precision, style, label=f"{tag} c{c}", alpha=0.7)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(plot_dir / "pr_curves.svg")
    plt.close(fig)


def cmd_metrics(args) -> int:
    report = pixel_diff_report(read_png(Path(args.a)), read_png(Path(args.b)))
    payload = dataclasses.asdict(report)
    if args.out:
        _write_json(Path(args.out), payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factor",
        description="Counterfactual test-time calibration pipeline for "
        "open-vocabulary detections.",
    )
    parser.add_argument(
        "--log-level", default=None, help="debug/info/warning/error (FACTOR_LOG wins)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="write counterfactual PNGs plus a diff report")
    p.add_argument("--in", dest="input", required=True, help="input PNG file or dir")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--params", default=None, help="config.json with transform_params")
    p.add_argument("--seed", type=int, default=None, help="override noise seed")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("calibrate", help="calibrate detections against a counterfactual view")
    p.add_argument("--orig", required=True, help="original detections.jsonl")
    p.add_argument("--cf", required=True, help="counterfactual detections.jsonl")
    p.add_argument("--emb", required=True, help="embeddings.json")
    p.add_argument("--config", default=None, help="config.json")
    p.add_argument("--out", required=True, help="calibrated detections.jsonl")
    p.add_argument("--stats", default=None, help="stats.json output path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="AP50/mAP50 against ground truth")
    p.add_argument("--det", required=True, help="detections.jsonl")
    p.add_argument("--gt", required=True, help="groundtruth.jsonl")
    p.add_argument("--out", default=None, help="report.json (stdout if omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the synthetic testbed experiment")
    p.add_argument("--config", default=None, help="experiment.json")
    p.add_argument("--out", required=True, help="report.json")
    p.add_argument("--emit-plots", default=None, help="directory for SVG plots")
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="pixel-difference report for an image pair")
    p.add_argument("--a", required=True, help="first PNG")
    p.add_argument("--b", required=True, help="second PNG")
    p.add_argument("--out", default=None, help="report.json (stdout if omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for usage errors; map usage to 1
        return EXIT_OK if e.code == 0 else EXIT_INPUT

    level = os.environ.get("FACTOR_LOG") or args.log_level or "warning"
    logging.basicConfig(level=getattr(logging, level.upper(), logging.WARNING))

    try:
        return args.func(args)
    except (InputError, InterchangeError, ParameterError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as e:
        print(f"internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
