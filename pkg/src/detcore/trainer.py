"""Plain gradient-descent loops for the three objectives."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import Detection, GroundTruthSet, evaluate
from .geometry import BoxCxcywh, convert, iou
from .losses import (
    DEFAULT_TEMPERATURE,
    LossWeights,
    PredictionSet,
    box_loss,
    box_loss_grad,
    contrastive_grad,
    contrastive_loss,
    hungarian_loss_and_grad,
)
from .numerics import l2_normalize_jvp
from .synthdata import DetectionScene, PairedViews, stream

MIN_SIZE = 1e-3
_INIT_STREAM = 100
_BATCH_STREAM = 101


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.05
    seed: int = 0
    batch_pairs: int | None = None  # None: every scene in every step
    temperature: float = DEFAULT_TEMPERATURE
    weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 10
    lr_schedule: str = "constant"  # or "cosine"
    class_lr: float | None = None  # logits step size for set prediction
    projection_dim: int = 128

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate < 0 or (self.class_lr is not None and self.class_lr < 0):
            raise ValueError("learning rates must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.lr_schedule!r}")
        if self.batch_pairs is not None and self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")

    def lr_at(self, step: int, base: float | None = None) -> float:
        base = self.learning_rate if base is None else base
        if self.lr_schedule == "constant" or self.steps == 0:
            return base
        return base * 0.5 * (1.0 + math.cos(math.pi * step / self.steps))


@dataclass
class TrainLog:
    metric_name: str
    rows: list = field(default_factory=list)  # (step, loss, metric)

    def add(self, step: int, loss: float, metric: float) -> None:
        if not (math.isfinite(loss) and math.isfinite(metric)):
            raise FloatingPointError(f"non-finite log entry at step {step}")
        self.rows.append((int(step), float(loss), float(metric)))

    @property
    def final(self):
        return self.rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "loss", "metric"])
        for step, loss, metric in self.rows:
            writer.writerow([step, repr(loss), repr(metric)])
        return buf.getvalue()


def _should_log(step: int, cfg: TrainConfig) -> bool:
    return step % cfg.log_every == 0 or step == cfg.steps


def retrieval_accuracy(embeddings: np.ndarray, partner: np.ndarray) -> float:
    """Fraction of embeddings whose nearest other embedding is their partner."""
    s = embeddings @ embeddings.T
    np.fill_diagonal(s, -np.inf)
    return float(np.mean(s.argmax(axis=1) == partner))


def encode(encoder: np.ndarray, x: np.ndarray) -> np.ndarray:
    v = x @ encoder.T
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def train_contrastive(data: PairedViews, cfg: TrainConfig):
    """Fit a linear encoder ``x -> normalize(E x)`` on paired views.

    Returns ``(E, log)``; the logged metric is top-1 positive retrieval
    accuracy over all ``2n`` embeddings.
    """
    n = len(data.view_a)
    if n < 2:
        raise ValueError("need at least 2 scenes")
    x = data.interleaved()
    if np.all(x == x[0]):
        raise ValueError("degenerate data: all views identical")
    partner = np.arange(2 * n) ^ 1
    d = x.shape[1]
    encoder = stream(cfg.seed, _INIT_STREAM).normal(0.0, 1.0 / np.sqrt(d), (cfg.projection_dim, d))
    log = TrainLog("retrieval_accuracy")
    for step in range(cfg.steps + 1):
        if _should_log(step, cfg):
            w = encode(encoder, x)
            log.add(step, contrastive_loss(w, partner, cfg.temperature),
                    retrieval_accuracy(w, partner))
        if step == cfg.steps:
            break
        if cfg.batch_pairs is None or cfg.batch_pairs >= n:
            xb = x
        else:
            pick = np.sort(stream(cfg.seed, _BATCH_STREAM, step).choice(n, cfg.batch_pairs, replace=False))
            rows = np.stack([2 * pick, 2 * pick + 1], axis=1).ravel()
            xb = x[rows]
        v = xb @ encoder.T
        w = v / np.linalg.norm(v, axis=1, keepdims=True)
        g_w = contrastive_grad(w, np.arange(len(w)) ^ 1, cfg.temperature)
        g_enc = l2_normalize_jvp(v, g_w).T @ xb
        encoder = encoder - cfg.lr_at(step) * g_enc
    return encoder, log


def clamp_box(p: np.ndarray) -> np.ndarray:
    out = np.array(p, dtype=np.float64)
    out[..., :2] = np.clip(out[..., :2], 0.0, 1.0)
    out[..., 2:] = np.clip(out[..., 2:], MIN_SIZE, 1.0)
    return out


def box_iou(a, b) -> float:
    return iou(convert(BoxCxcywh.from_array(a), 1.0, 1.0), convert(BoxCxcywh.from_array(b), 1.0, 1.0))


def refine_boxes(init, targets, cfg: TrainConfig):
    """Move each box toward its target by descending the box loss.

    Parameters are clamped to valid ranges after every step.  Returns
    ``(boxes, log)`` with mean loss and mean IoU per logged step.
    """
    if len(init) != len(targets):
        raise ValueError("init and targets differ in length")
    boxes = np.array([BoxCxcywh.from_array(_arr(b)).as_array() for b in init]).reshape(-1, 4)
    goal = np.array([BoxCxcywh.from_array(_arr(b)).as_array() for b in targets]).reshape(-1, 4)
    log = TrainLog("mean_iou")
    for step in range(cfg.steps + 1):
        if _should_log(step, cfg):
            losses = [box_loss(p, g, cfg.weights) for p, g in zip(boxes, goal)]
            ious = [box_iou(p, g) for p, g in zip(boxes, goal)]
            log.add(step, float(np.mean(losses)) if len(boxes) else 0.0,
                    float(np.mean(ious)) if len(boxes) else 1.0)
        if step == cfg.steps:
            break
        lr = cfg.lr_at(step)
        for i in range(len(boxes)):
            boxes[i] = clamp_box(boxes[i] - lr * box_loss_grad(boxes[i], goal[i], cfg.weights))
    return [BoxCxcywh.from_array(b) for b in boxes], log


def _arr(b) -> np.ndarray:
    return b.as_array() if isinstance(b, BoxCxcywh) else np.asarray(b, dtype=np.float64)


def predictions_to_detections(preds: PredictionSet, scene: DetectionScene, image_id: int = 0):
    """One detection per query: best real class, scored by its probability."""
    probs = preds.probs()[:, :-1]
    dets = []
    for q in range(preds.n_queries):
        c = int(np.argmax(probs[q]))
        b = BoxCxcywh.from_array(clamp_box(preds.boxes[q]))
        dets.append(Detection(image_id, c, convert(b, scene.width, scene.height), float(probs[q, c])))
    return dets


def scene_ground_truth(scene: DetectionScene, image_id: int = 0) -> GroundTruthSet:
    gts = GroundTruthSet()
    for c, b in scene.objects:
        gts.add(image_id, c, convert(b, scene.width, scene.height))
    return gts


def init_predictions(n_queries: int, n_classes: int, seed: int) -> PredictionSet:
    rng = stream(seed, _INIT_STREAM, 1)
    logits = rng.normal(0.0, 0.1, (n_queries, n_classes + 1))
    boxes = np.column_stack([
        rng.uniform(0.2, 0.8, n_queries),
        rng.uniform(0.2, 0.8, n_queries),
        rng.uniform(0.1, 0.3, n_queries),
        rng.uniform(0.1, 0.3, n_queries),
    ])
    return PredictionSet(logits, boxes)


def train_set_prediction(
    scene: DetectionScene, n_queries: int, cfg: TrainConfig, n_classes: int = 3
):
    """Fit free per-query logits and boxes to one scene with the set loss.

    Logged metric is mAP@0.5 of the current predictions on the scene.
    """
    gts = scene.ground_truth()
    if n_queries < len(gts):
        raise ValueError(f"insufficient queries: {n_queries} for {len(gts)} objects")
    preds = init_predictions(n_queries, n_classes, cfg.seed)
    truth = scene_ground_truth(scene)
    class_lr = cfg.learning_rate if cfg.class_lr is None else cfg.class_lr
    log = TrainLog("map_50")
    for step in range(cfg.steps + 1):
        res = hungarian_loss_and_grad(preds, gts, cfg.weights, need_grad=step < cfg.steps)
        if _should_log(step, cfg):
            report = evaluate(predictions_to_detections(preds, scene), truth)
            log.add(step, res.loss, report.map_50)
        if step == cfg.steps:
            break
        preds.logits = preds.logits - cfg.lr_at(step, class_lr) * res.logit_grad
        preds.boxes = clamp_box(preds.boxes - cfg.lr_at(step) * res.box_grad)
    return preds, log
