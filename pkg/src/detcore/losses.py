"""Training objectives and their analytic gradients.

* contrastive loss over paired views on the unit hypersphere
* box regression loss (weighted complete-IoU plus L1)
* Hungarian set-prediction loss over an optimal query assignment
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxCxcywh, ciou_grad, ciou_loss

DEFAULT_TEMPERATURE = 0.07
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class LossWeights:
    lambda_iou: float = 2.0
    lambda_l1: float = 4.0
    no_object_weight: float = 0.1

    def __post_init__(self):
        for name in ("lambda_iou", "lambda_l1", "no_object_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def parity_pairing(n_views: int) -> np.ndarray:
    """Partner map for the layout ``[a0, b0, a1, b1, ...]``."""
    if n_views < 2 or n_views % 2:
        raise ValueError(f"need an even number of views >= 2, got {n_views}")
    return np.arange(n_views) ^ 1


def _check_pairing(partner: np.ndarray, n: int) -> np.ndarray:
    partner = np.asarray(partner, dtype=np.int64)
    if partner.shape != (n,):
        raise ValueError(f"pairing has shape {partner.shape}, expected ({n},)")
    idx = np.arange(n)
    if np.any((partner < 0) | (partner >= n)):
        raise ValueError("pairing index out of range")
    if np.any(partner == idx) or np.any(partner[partner] != idx):
        raise ValueError("pairing must be an involution without fixed points")
    return partner


def _prepare(embeddings, partner, temperature, check_unit):
    w = np.asarray(embeddings, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError(f"embeddings must be (2N, D) with 2N >= 2, got {w.shape}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite embeddings")
    if check_unit:
        norms = np.linalg.norm(w, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("embeddings must be unit-norm")
    if partner is None:
        partner = parity_pairing(w.shape[0])
    return w, _check_pairing(partner, w.shape[0])


def _similarity_logits(w: np.ndarray, temperature: float) -> np.ndarray:
    s = (w @ w.T) / temperature
    np.fill_diagonal(s, -np.inf)
    return s


def contrastive_loss(
    embeddings,
    partner=None,
    temperature: float = DEFAULT_TEMPERATURE,
    check_unit: bool = True,
) -> float:
    """Summed InfoNCE loss over all anchors of a paired batch.

    Each anchor ``i`` scores its partner against every other embedding in
    the batch (itself excluded).  ``partner`` defaults to the parity
    layout; pass ``check_unit=False`` to evaluate off the sphere, e.g. for
    finite differences.
    """
    w, partner = _prepare(embeddings, partner, temperature, check_unit)
    s = _similarity_logits(w, temperature)
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    pos = s[np.arange(len(w)), partner]
    return float(np.sum(lse - pos))


def contrastive_grad(
    embeddings,
    partner=None,
    temperature: float = DEFAULT_TEMPERATURE,
    check_unit: bool = True,
) -> np.ndarray:
    """Gradient of :func:`contrastive_loss` w.r.t. each embedding, as free variables."""
    w, partner = _prepare(embeddings, partner, temperature, check_unit)
    n = len(w)
    s = _similarity_logits(w, temperature)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    pos = np.zeros((n, n))
    pos[np.arange(n), partner] = 1.0
    return (p + p.T - pos - pos.T) @ w / temperature


@dataclass(frozen=True)
class ContrastiveBatch:
    embeddings: np.ndarray
    partner: np.ndarray = None
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        w, partner = _prepare(self.embeddings, self.partner, self.temperature, True)
        object.__setattr__(self, "embeddings", w)
        object.__setattr__(self, "partner", partner)

    def loss(self) -> float:
        return contrastive_loss(self.embeddings, self.partner, self.temperature)

    def grad(self) -> np.ndarray:
        return contrastive_grad(self.embeddings, self.partner, self.temperature)


def _box(b) -> np.ndarray:
    if isinstance(b, BoxCxcywh):
        return b.as_array()
    return np.asarray(b, dtype=np.float64).ravel()


def box_loss(pred, gt, weights: LossWeights | None = None) -> float:
    weights = weights or LossWeights()
    p, g = _box(pred), _box(gt)
    value = weights.lambda_l1 * float(np.abs(p - g).sum())
    if weights.lambda_iou:
        value += weights.lambda_iou * ciou_loss(p, g)
    return value


def box_loss_grad(pred, gt, weights: LossWeights | None = None) -> np.ndarray:
    """Gradient w.r.t. ``pred``; the L1 part uses ``sign`` (zero at equality)."""
    weights = weights or LossWeights()
    p, g = _box(pred), _box(gt)
    grad = weights.lambda_l1 * np.sign(p - g)
    if weights.lambda_iou:
        grad = grad + weights.lambda_iou * ciou_grad(p, g)
    return grad


@dataclass
class PredictionSet:
    """Per-query class logits (real classes then no-object) and boxes."""

    logits: np.ndarray
    boxes: np.ndarray

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        self.boxes = np.array(self.boxes, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] < 2:
            raise ValueError(f"logits must be (Q, K+1) with K >= 1, got {self.logits.shape}")
        if self.boxes.shape != (len(self.logits), 4):
            raise ValueError(f"boxes must be ({len(self.logits)}, 4), got {self.boxes.shape}")
        if not (np.all(np.isfinite(self.logits)) and np.all(np.isfinite(self.boxes))):
            raise ValueError("non-finite predictions")
        if np.any(self.boxes[:, 2:] <= 0):
            raise ValueError("degenerate predicted box")

    @property
    def n_queries(self) -> int:
        return len(self.logits)

    @property
    def n_classes(self) -> int:
        """Real classes, excluding no-object."""
        return self.logits.shape[1] - 1

    def log_probs(self) -> np.ndarray:
        z = self.logits
        m = z.max(axis=1, keepdims=True)
        return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


@dataclass
class SetLossResult:
    loss: float
    logit_grad: np.ndarray
    box_grad: np.ndarray
    assignment: object = field(repr=False)


def _gt_arrays(gts, n_classes):
    labels = np.array([int(c) for c, _ in gts], dtype=np.int64)
    boxes = np.array([_box(b) for _, b in gts], dtype=np.float64).reshape(-1, 4)
    if np.any((labels < 0) | (labels >= n_classes)):
        raise ValueError(f"ground-truth label outside [0, {n_classes})")
    return labels, boxes


def hungarian_loss_and_grad(
    preds: PredictionSet, gts, weights: LossWeights | None = None, need_grad: bool = True
) -> SetLossResult:
    from .matching import cost_matrix, hungarian

    weights = weights or LossWeights()
    labels, gt_boxes = _gt_arrays(gts, preds.n_classes)
    if preds.n_queries < len(labels):
        raise ValueError(
            f"insufficient queries: {preds.n_queries} queries for {len(labels)} targets"
        )
    logp = preds.log_probs()
    probs = np.exp(logp)
    assignment = hungarian(cost_matrix(probs, preds.boxes, labels, gt_boxes, weights))
    phi = preds.n_classes

    loss = 0.0
    logit_grad = np.zeros_like(preds.logits)
    box_grad = np.zeros_like(preds.boxes)
    matched = np.zeros(preds.n_queries, dtype=bool)
    for q, t in assignment.pairs:
        matched[q] = True
        c = labels[t]
        loss += -logp[q, c] + box_loss(preds.boxes[q], gt_boxes[t], weights)
        if need_grad:
            logit_grad[q] += probs[q]
            logit_grad[q, c] -= 1.0
            box_grad[q] += box_loss_grad(preds.boxes[q], gt_boxes[t], weights)
    for q in np.nonzero(~matched)[0]:
        loss += weights.no_object_weight * -logp[q, phi]
        if need_grad:
            g = probs[q].copy()
            g[phi] -= 1.0
            logit_grad[q] += weights.no_object_weight * g
    return SetLossResult(float(loss), logit_grad, box_grad, assignment)


def hungarian_loss(preds: PredictionSet, gts, weights: LossWeights | None = None) -> float:
    """Set-prediction loss over the optimal assignment.

    ``gts`` is a sequence of ``(label, box)``.  Matched queries pay
    ``-log p(label)`` plus the box loss; unmatched queries pay
    ``no_object_weight * -log p(no-object)``.
    """
    return hungarian_loss_and_grad(preds, gts, weights, need_grad=False).loss


def hungarian_loss_grad(preds: PredictionSet, gts, weights: LossWeights | None = None):
    """``(logit_grad, box_grad)`` with the assignment held fixed."""
    res = hungarian_loss_and_grad(preds, gts, weights)
    return res.logit_grad, res.box_grad
