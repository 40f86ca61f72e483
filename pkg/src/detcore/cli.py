"""Command-line entry point: ``detcore {eval,match,gradcheck,synth,train}``.

Exit codes: 0 success, 1 usage error, 2 input/schema error, 3 failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import cocojson
from .evaluation import evaluate
from .losses import LossWeights
from .matching import hungarian
from .synthdata import SceneSpec, gen_box_pairs, gen_detection_scene, gen_paired_views, stream
from .trainer import TrainConfig, box_iou, refine_boxes, train_contrastive, train_set_prediction
from .verify import LOSSES, gradcheck

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2, 3
SEED_ENV = "DETCORE_SEED"
_OBJECT_COUNT_STREAM = 7


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Numeric defaults shared by all subcommands; a ``--config`` JSON file may override them."""

    temperature: float = 0.07
    lambda_iou: float = 2.0
    lambda_l1: float = 4.0
    no_object_weight: float = 0.1
    iou_thresh: float = 0.5
    seed: int = 0

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        cfg = cls()
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                cfg = replace(cfg, seed=int(env_seed))
            except ValueError:
                raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
        if path is None:
            return cfg
        data = _read_json(path)
        if not isinstance(data, dict):
            raise InputError(f"{path}: config must be a JSON object")
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise InputError(f"{path}: unknown config keys {unknown}")
        try:
            values = {k: (int(v) if k == "seed" else float(v)) for k, v in data.items()}
        except (TypeError, ValueError):
            raise InputError(f"{path}: config values must be numbers") from None
        return replace(cfg, **values)

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_iou, self.lambda_l1, self.no_object_weight)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from None


def _write_json(doc, path) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _seed(args, run: RunConfig) -> int:
    return run.seed if args.seed is None else args.seed


def cmd_eval(args, run: RunConfig) -> int:
    try:
        gts = cocojson.load_ground_truth(args.gt)
        dets = cocojson.load_detections(args.det)
    except OSError as exc:
        raise InputError(f"cannot read {exc.filename}: {exc.strerror}") from None
    iou_thresh = run.iou_thresh if args.iou is None else args.iou
    if not 0 < iou_thresh < 1:
        raise UsageError(f"--iou must lie in (0, 1), got {iou_thresh}")
    try:
        report = evaluate(
            dets, gts, "sweep" if args.sweep else "at_05",
            extra_thresholds=(iou_thresh,) if iou_thresh != 0.5 else (),
        )
    except ValueError as exc:
        raise InputError(f"{args.gt}: {exc}") from None
    _write_json(report.to_dict(), args.out)
    if args.plot:
        from .plotting import plot_pr_curves

        plot_pr_curves(report, args.plot)
    return EXIT_OK


def _read_cost_csv(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise InputError(f"{path}:1: empty cost matrix")
    width = len(rows[0])
    out = []
    for lineno, row in enumerate(rows, 1):
        if len(row) != width:
            raise InputError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric cost entry") from None
        if not all(np.isfinite(vals)):
            raise InputError(f"{path}:{lineno}: non-finite cost entry")
        out.append(vals)
    return np.array(out)


def cmd_match(args, run: RunConfig) -> int:
    costs = _read_cost_csv(args.cost)
    try:
        result = hungarian(costs)
    except ValueError as exc:
        raise InputError(f"{args.cost}: {exc}") from None
    _write_json(result.to_dict(), args.out)
    return EXIT_OK


def cmd_gradcheck(args, run: RunConfig) -> int:
    summary = gradcheck(args.loss, args.trials, _seed(args, run), args.tol)
    doc = summary.to_dict()
    _write_json(doc, args.out)
    if not summary.ok:
        print(
            f"verification failed: {len(summary.failures)} of {summary.trials} "
            f"{args.loss} trials above tol {args.tol}",
            file=sys.stderr,
        )
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(args, run: RunConfig) -> int:
    seed = _seed(args, run)
    if args.kind == "pairs":
        spec = SceneSpec(args.n or 64, args.latent_dim, args.sigma, seed, args.view_dim)
        doc = {"seed": seed, "latent_dim": spec.latent_dim, "sigma": spec.view_noise_sigma}
        doc.update(gen_paired_views(spec).to_dict())
    else:
        n = args.n or 1
        images, anns, categories = [], [], None
        for i in range(n):
            k = args.objects or int(stream(seed, _OBJECT_COUNT_STREAM, i).integers(1, 11))
            scene = gen_detection_scene(k, seed, index=i)
            coco = scene.to_coco(image_id=i, start_ann_id=len(anns))
            images += coco["images"]
            anns += coco["annotations"]
            categories = coco["categories"]
        doc = cocojson.ground_truth_doc(images, anns, categories)
    _write_json(doc, args.out)
    return EXIT_OK


TRAIN_DEFAULTS = {
    "contrastive": dict(steps=500, lr=0.05, schedule="constant"),
    "boxes": dict(steps=2000, lr=1e-2, schedule="cosine"),
    "setpred": dict(steps=5000, lr=1e-2, schedule="cosine", class_lr=1.0),
}


def run_training(mode: str, args, run: RunConfig):
    """Run one demonstration; returns ``(log, summary dict)``."""
    d = TRAIN_DEFAULTS[mode]
    seed = _seed(args, run)
    cfg = TrainConfig(
        steps=d["steps"] if args.steps is None else args.steps,
        learning_rate=d["lr"] if args.lr is None else args.lr,
        seed=seed,
        temperature=run.temperature if args.tau is None else args.tau,
        weights=run.weights(),
        log_every=args.log_every,
        lr_schedule=args.schedule or d["schedule"],
        class_lr=args.class_lr if args.class_lr is not None else d.get("class_lr"),
        batch_pairs=args.batch_pairs,
    )
    if mode == "contrastive":
        data = gen_paired_views(SceneSpec(args.scenes, args.dim, args.sigma, seed))
        _, log = train_contrastive(data, cfg)
        summary = {}
    elif mode == "boxes":
        init, targets = gen_box_pairs(args.boxes, seed)
        final, log = refine_boxes(init, targets, cfg)
        ious = [box_iou(b.as_array(), np.asarray(t)) for b, t in zip(final, targets)]
        summary = {"boxes": len(ious), "iou_above_0.99": int(sum(v > 0.99 for v in ious))}
    else:
        scene = gen_detection_scene(args.objects, seed)
        _, log = train_set_prediction(scene, args.queries, cfg)
        summary = {"objects": args.objects, "queries": args.queries}
    step, loss, metric = log.final
    summary.update({"mode": mode, "steps": step, "final_loss": loss, log.metric_name: metric})
    return log, summary


def cmd_train(args, run: RunConfig) -> int:
    try:
        log, summary = run_training(args.mode, args, run)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).write_text(log.to_csv())
    if args.plot:
        from .plotting import plot_training_curve

        plot_training_curve(log, args.plot, title=f"train {args.mode}")
    _write_json(summary, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="detcore", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file overriding numeric defaults")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eval", help="COCO-style AP/mAP of detections against ground truth")
    e.add_argument("--gt", required=True, help="ground-truth JSON (images/annotations/categories)")
    e.add_argument("--det", required=True, help="detections JSON array")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--iou", type=float, help="extra IoU threshold to score (0.5 always reported)")
    g.add_argument("--sweep", action="store_true", help="average over IoU 0.50:0.05:0.95")
    e.add_argument("--out", help="report JSON path (default stdout)")
    e.add_argument("--plot", help="write PR curves at IoU 0.5 to this image (svg/png/pdf)")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("match", help="optimal assignment for a dense cost matrix")
    m.add_argument("--cost", required=True, help="CSV, one row per query")
    m.add_argument("--out", help="JSON path (default stdout)")
    m.set_defaults(func=cmd_match)

    gc = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    gc.add_argument("--loss", required=True, choices=LOSSES)
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--out", help="JSON path (default stdout)")
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="emit seeded synthetic data as JSON")
    s.add_argument("--kind", required=True, choices=("pairs", "scenes"))
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="JSON path (default stdout)")
    s.add_argument("--n", type=int, help="scenes (pairs: 64, scenes: 1)")
    s.add_argument("--latent-dim", type=int, default=32)
    s.add_argument("--view-dim", type=int)
    s.add_argument("--sigma", type=float, default=0.1)
    s.add_argument("--objects", type=int, help="objects per detection scene (default random 1-10)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="gradient-descent demonstrations")
    t.add_argument("mode", choices=tuple(TRAIN_DEFAULTS))
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--class-lr", type=float, help="logit step size for setpred")
    t.add_argument("--schedule", choices=("constant", "cosine"))
    t.add_argument("--seed", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--log-every", type=int, default=10)
    t.add_argument("--batch-pairs", type=int)
    t.add_argument("--scenes", type=int, default=64)
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--sigma", type=float, default=0.1)
    t.add_argument("--boxes", type=int, default=100)
    t.add_argument("--objects", type=int, default=3)
    t.add_argument("--queries", type=int, default=8)
    t.add_argument("--out", required=True, help="metrics CSV (step, loss, metric)")
    t.add_argument("--plot", help="loss/metric curve image (svg/png/pdf)")
    t.set_defaults(func=cmd_train)
    return p


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = RunConfig.load(args.config)
        return args.func(args, run)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cocojson.SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
