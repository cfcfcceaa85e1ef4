"""Command-line entry point: composable subcommands plus a one-shot pipeline.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation error.
Failures emit one machine-readable JSON object on stderr. All artifacts are
written atomically (temp-then-rename), and every randomized step derives its
randomness from the root seed through named substreams, so reruns with the
same configuration produce byte-identical outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, fusion, guidance, planner, prompter, pseudogen, raster, report, segclient
from ._util import atomic_write_text, read_rgb, stream_key, substream, write_rgb

log = logging.getLogger("scalpkit.cli")

CONFIG_SCHEMA_VERSION = 1
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "parallelism": {"type": "integer", "minimum": 1},
        "prompter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "iou_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "num_negatives": {"type": "integer", "minimum": 0},
                "max_positives": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "fusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "min_area": {"type": "integer", "minimum": 0},
                "connectivity": {"enum": [4, 8]},
            },
        },
        "planner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "higher_only": {"type": "boolean"},
                "mask_dir": {"type": "string"},
            },
        },
        "segmenter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "endpoint": {"type": "string"},
                "timeout_ms": {"type": "integer", "minimum": 1},
                "attempts": {"type": "integer", "minimum": 1},
            },
        },
        "guidance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"weights": {"type": "object"}},
        },
    },
}

METRIC_COLUMNS = ("pixel_f1", "jaccard", "dice", "tp", "fp", "fn", "tn", "pixel_f1_macro")


class ValidationError(ValueError):
    """Bad paths, values, or configuration caught before any work runs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message)
        raise SystemExit(2)


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"config schema violation: {exc.message}") from exc
    return doc


def _pick(flag_value, config: dict, path: tuple[str, ...], default):
    """Flag > config file > default."""
    if flag_value is not None:
        return flag_value
    node = config
    for key in path:
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def _need_seed(args, config) -> int:
    seed = _pick(args.seed, config, ("seed",), None)
    if seed is None:
        raise ValidationError("a seed is required for randomized steps (--seed or config 'seed')")
    return int(seed)


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what} directory not found: {path}")
    return p


def _existing_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} file not found: {path}")
    return p


def _parse_range(text: str, kind=int) -> tuple:
    try:
        lo, hi = (kind(part) for part in text.split(":"))
    except Exception as exc:
        raise ValidationError(f"expected MIN:MAX, got {text!r}") from exc
    if lo > hi:
        raise ValidationError(f"range minimum exceeds maximum: {text!r}")
    return lo, hi


def _image_files(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pgm", ".jpg", ".jpeg"))
    if not files:
        raise ValidationError(f"no image files in {directory}")
    return files


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_pseudo(args, config) -> int:
    patches_dir = _existing_dir(args.patches, "patches")
    seed = _need_seed(args, config)
    patches = [(p.stem, read_rgb(p)) for p in _image_files(patches_dir)]
    cfg = pseudogen.DatasetConfig(
        count=args.count,
        curves_per_image=_parse_range(args.curves),
        thickness=_parse_range(args.thickness),
        noise_circles=_parse_range(args.noise),
        noise_radius=_parse_range(args.radius),
    )
    out = Path(args.out)
    manifest = {"seed": seed, "count": cfg.count, "patch_ids": [pid for pid, _ in patches], "pairs": []}
    for index, pair in enumerate(pseudogen.iter_pairs(patches, cfg, seed)):
        write_rgb(out / f"img_{index:05d}.png", pair.image)
        raster.write_mask(out / f"msk_{index:05d}.png", pair.mask)
        manifest["pairs"].append(pseudogen.pair_to_manifest(index, pair))
    atomic_write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    log.info("wrote %d pairs to %s", cfg.count, out)
    return 0


def _prompter_config(args, config) -> prompter.PrompterConfig:
    return prompter.PrompterConfig(
        n=_pick(args.n, config, ("prompter", "n"), 10),
        iou_threshold=_pick(args.iou, config, ("prompter", "iou_threshold"), 0.3),
        num_negatives=_pick(args.negatives, config, ("prompter", "num_negatives"), 10),
        max_positives=_pick(args.max_positives, config, ("prompter", "max_positives"), None),
    )


def _cmd_prompts(args, config) -> int:
    mask = raster.read_mask(_existing_file(args.mask, "mask"))
    cfg = _prompter_config(args, config)
    prompts = prompter.build_prompts(mask, cfg, _need_seed(args, config))
    prompter.write_prompts(args.out, prompts, cfg.n)
    log.info("%d positives, %d negatives -> %s", len(prompts.positives), len(prompts.negatives), args.out)
    return 0


def _cmd_ensemble(args, config) -> int:
    coarse = raster.read_mask(_existing_file(args.mhat, "coarse mask"))
    prompted = raster.read_mask(_existing_file(args.map, "prompted mask"))
    final = fusion.combine(
        coarse,
        prompted,
        min_area=_pick(args.min_area, config, ("fusion", "min_area"), 0),
        connectivity=_pick(args.connectivity, config, ("fusion", "connectivity"), 8),
    )
    raster.write_mask(args.out, final)
    return 0


def _format_row(image_id: str, values: dict) -> str:
    cells = [image_id]
    for col in METRIC_COLUMNS:
        v = values[col]
        cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
    return ",".join(cells)


def _write_metrics_csv(rows: list[tuple[str, dict]], out_path: Path, figures: bool) -> None:
    rows = sorted(rows, key=lambda r: r[0])
    lines = ["id," + ",".join(METRIC_COLUMNS)]
    lines += [_format_row(image_id, values) for image_id, values in rows]
    macro = {col: float(np.mean([v[col] for _, v in rows])) for col in METRIC_COLUMNS}
    lines.append(_format_row("macro", macro))
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    if figures:
        report.save_metrics_figure([v for _, v in rows], out_path.with_name(out_path.stem + "_hist.png"))


def _eval_pair_dirs(pred_dir: Path, gt_dir: Path) -> list[tuple[str, dict]]:
    rows = []
    for pred_path in _image_files(pred_dir):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            raise ValidationError(f"no ground-truth counterpart for {pred_path.name} in {gt_dir}")
        ev = fusion.evaluate(raster.read_mask(pred_path), raster.read_mask(gt_path))
        rows.append((pred_path.stem, ev.__dict__.copy()))
    return rows


def _cmd_eval(args, config) -> int:
    rows = _eval_pair_dirs(_existing_dir(args.pred_dir, "prediction"), _existing_dir(args.gt_dir, "ground-truth"))
    _write_metrics_csv(rows, Path(args.out), figures=not args.no_figures)
    return 0


def _cmd_plan_augment(args, config) -> int:
    index = planner.read_index(_existing_file(args.index, "index"))
    seed = _need_seed(args, config)
    higher_only = False if args.any_direction else _pick(None, config, ("planner", "higher_only"), True)
    mask_dir = _pick(args.mask_dir, config, ("planner", "mask_dir"), None)
    diseases = tuple(args.disease) if args.disease else planner.DISEASES
    jobs, skips = planner.plan_jobs(
        index,
        args.jobs,
        seed,
        diseases=diseases,
        higher_only=higher_only,
        mask_dir=mask_dir,
    )
    out = Path(args.out)
    planner.write_plan(out, jobs)
    if skips:
        skip_path = out.with_name(out.stem + ".skips.json")
        atomic_write_text(
            skip_path,
            json.dumps([{"job_index": s.job_index, "reason": s.reason} for s in skips], indent=2) + "\n",
        )
        log.warning("%d of %d jobs skipped; reasons in %s", len(skips), args.jobs, skip_path)
    if not args.no_figures:
        pre = {d: planner.severity_counts(index, d) for d in planner.DISEASES}
        post = planner.post_plan_distribution(index, jobs)
        report.save_distribution_figure(pre, post, out.with_name(out.stem + "_distribution.png"))
    log.info("planned %d jobs -> %s", len(jobs), out)
    return 0


def _cmd_blend_step(args, config) -> int:
    x_t = guidance.tensor_from_rgb(read_rgb(_existing_file(args.xt, "x_t image")))
    mask = raster.read_mask(_existing_file(args.mask, "mask"))
    if args.denoiser == "zero":
        eps = np.zeros_like(x_t)
    elif args.denoiser.startswith("file:"):
        eps = guidance.tensor_from_rgb(read_rgb(_existing_file(args.denoiser[5:], "noise image")))
    else:
        raise ValidationError(f"denoiser must be 'zero' or 'file:PATH', got {args.denoiser!r}")
    weights_doc = _pick(None, config, ("guidance", "weights"), {})
    if args.weights:
        weights_doc = json.loads(_existing_file(args.weights, "weights").read_text())
    weights = guidance.GuidanceWeights.from_mapping(weights_doc)
    providers = dict(guidance.ZERO_PROVIDERS)
    if args.src:
        x_src = guidance.tensor_from_rgb(read_rgb(_existing_file(args.src, "source image")))
        providers["mask"] = guidance.mask_term_provider(x_src, mask)
    out = guidance.blend_step(x_t, eps, args.alpha_bar, providers, weights, mask)
    write_rgb(args.out, guidance.rgb_from_tensor(out))
    return 0


def _make_backend(spec: str | None, config: dict, image_id: str | None = None, timeout_ms: int | None = None):
    spec = spec or _pick(None, config, ("segmenter", "endpoint"), None) or os.environ.get(segclient.ENDPOINT_ENV)
    if not spec:
        raise ValidationError(
            f"no segmenter backend: pass --backend, config segmenter.endpoint, or ${segclient.ENDPOINT_ENV}"
        )
    timeout_ms = _pick(timeout_ms, config, ("segmenter", "timeout_ms"), 30000)
    if spec.startswith("mock:") and image_id is not None:
        root = Path(spec[len("mock:") :])
        if root.is_dir():
            return segclient.MockBackend(raster.read_mask(root / f"{image_id}.png"))
    return segclient.resolve_backend(spec, timeout_ms=timeout_ms)


def _cmd_segment(args, config) -> int:
    image = read_rgb(_existing_file(args.image, "image"))
    prompts = prompter.prompts_from_json(_existing_file(args.prompts, "prompts").read_text())
    backend = _make_backend(args.backend, config, timeout_ms=args.timeout_ms)
    attempts = _pick(args.attempts, config, ("segmenter", "attempts"), 3)
    resp = segclient.request_mask(backend, segclient.PromptRequest(image, prompts), attempts=attempts)
    raster.write_mask(args.out, resp.mask)
    log.info("backend %s answered in %.1f ms", resp.model, resp.latency_ms)
    return 0


def _cmd_pipeline(args, config) -> int:
    images_dir = _existing_dir(args.images, "images")
    coarse_dir = _existing_dir(args.coarse, "coarse-mask")
    gt_dir = _existing_dir(args.gt, "ground-truth") if args.gt else None
    seed = _need_seed(args, config)
    p_cfg = _prompter_config(args, config)
    min_area = _pick(args.min_area, config, ("fusion", "min_area"), 0)
    connectivity = _pick(args.connectivity, config, ("fusion", "connectivity"), 8)
    attempts = _pick(args.attempts, config, ("segmenter", "attempts"), 3)
    parallelism = _pick(args.parallelism, config, ("parallelism",), 1)
    out = Path(args.out)

    ids = [p.stem for p in _image_files(coarse_dir)]
    for image_id in ids:
        if not (images_dir / f"{image_id}.png").exists():
            raise ValidationError(f"no image for coarse mask {image_id!r} in {images_dir}")

    def run_one(image_id: str):
        coarse_path = coarse_dir / f"{image_id}.png"
        if args.scores:
            scores = np.asarray(read_rgb(coarse_path))[:, :, 0] / 255.0
            coarse = segclient.binarize(scores, args.threshold)
        else:
            coarse = raster.read_mask(coarse_path)
        image = read_rgb(images_dir / f"{image_id}.png")
        image_seed = int(substream(seed, "prompts", stream_key(image_id)).integers(0, 2**62))
        prompts = prompter.build_prompts(coarse, p_cfg, image_seed)
        backend = _make_backend(args.backend, config, image_id=image_id)
        resp = segclient.request_mask(backend, segclient.PromptRequest(image, prompts), attempts=attempts)
        final = fusion.combine(coarse, resp.mask, min_area=min_area, connectivity=connectivity)
        prompter.write_prompts(out / "prompts" / f"{image_id}.json", prompts, p_cfg.n)
        raster.write_mask(out / "map" / f"{image_id}.png", resp.mask)
        raster.write_mask(out / "final" / f"{image_id}.png", final)
        if gt_dir is None:
            return image_id, None
        ev = fusion.evaluate(final, raster.read_mask(gt_dir / f"{image_id}.png"))
        return image_id, ev.__dict__.copy()

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_one, ids))
    else:
        results = [run_one(i) for i in ids]
    if gt_dir is not None:
        _write_metrics_csv([(i, row) for i, row in results], out / "metrics.csv", figures=not args.no_figures)
    log.info("pipeline finished for %d images -> %s", len(ids), out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalpkit", description=__doc__)
    parser.add_argument("--config", help="JSON configuration file (flags override it)")
    parser.add_argument(
        "--version",
        action="version",
        version=f"scalpkit {__version__} (config schema {CONFIG_SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pseudo", help="synthesize (image, mask) training pairs")
    p.add_argument("--patches", required=True)
    p.add_argument("--count", type=int, default=3000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", default="3:8", help="curves per image, MIN:MAX")
    p.add_argument("--thickness", default="1:5", help="stroke thickness, MIN:MAX")
    p.add_argument("--noise", default="0:12", help="noise circles per image, MIN:MAX")
    p.add_argument("--radius", default="1:4", help="noise circle radius, MIN:MAX")
    p.set_defaults(func=_cmd_gen_pseudo)

    p = sub.add_parser("prompts", help="derive point prompts from a coarse mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--iou", type=float)
    p.add_argument("--negatives", type=int)
    p.add_argument("--max-positives", type=int, dest="max_positives")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_prompts)

    p = sub.add_parser("ensemble", help="AND two masks and drop small components")
    p.add_argument("--mhat", required=True, help="coarse mask file")
    p.add_argument("--map", required=True, help="prompted mask file")
    p.add_argument("--min-area", type=int, dest="min_area")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("eval", help="per-image mask metrics as CSV (+ histogram figure)")
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--gt-dir", required=True, dest="gt_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("plan-augment", help="translation-job manifest from a label index")
    p.add_argument("--index", required=True)
    p.add_argument("--jobs", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-dir", dest="mask_dir")
    p.add_argument("--any-direction", action="store_true", dest="any_direction",
                   help="allow targets at any severity, not only higher ones")
    p.add_argument("--disease", action="append", choices=planner.DISEASES)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_plan_augment)

    p = sub.add_parser("blend-step", help="one masked reverse-diffusion update")
    p.add_argument("--xt", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--alpha-bar", type=float, required=True, dest="alpha_bar")
    p.add_argument("--denoiser", default="zero", help="zero | file:EPS.png")
    p.add_argument("--src", help="source image enabling the masked-L2 term")
    p.add_argument("--weights", help="JSON file overriding guidance weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_blend_step)

    p = sub.add_parser("segment", help="call a point-prompt segmentation backend")
    p.add_argument("--image", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--backend", help="http(s)://URL | mock:MASK.png | cmd:COMMAND")
    p.add_argument("--timeout-ms", type=int, dest="timeout_ms")
    p.add_argument("--attempts", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("pipeline", help="prompts -> segment -> ensemble (-> eval) over a directory")
    p.add_argument("--images", required=True)
    p.add_argument("--coarse", required=True, help="coarse masks (or score maps with --scores)")
    p.add_argument("--scores", action="store_true", help="treat --coarse files as score maps")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--backend", help="http(s)://URL | mock:GT_DIR | cmd:COMMAND")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="ground-truth masks for metrics.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--iou", type=float)
    p.add_argument("--negatives", type=int)
    p.add_argument("--max-positives", type=int, dest="max_positives")
    p.add_argument("--min-area", type=int, dest="min_area")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--attempts", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        return args.func(args, config)
    except SystemExit:
        raise
    except ValidationError as exc:
        _emit_error("ValidationError", str(exc))
        return 3
    except Exception as exc:  # noqa: BLE001 - boundary: report and set exit status
        _emit_error(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
