"""Finite-difference verification of the analytic gradients.

Each checker draws random *generic* instances (away from the kinks of
min/max, |.| and assignment switches), compares the analytic gradient to
central differences and reports the worst relative error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import ciou_grad, ciou_loss
from .losses import (
    PredictionSet,
    contrastive_grad,
    contrastive_loss,
    hungarian_loss,
    hungarian_loss_and_grad,
)
from .matching import cost_matrix
from .numerics import central_diff_grad, relative_error
from .synthdata import random_box, stream

GRADCHECK_STEP = 1e-5
KINK_MARGIN = 1e-3
LOSSES = ("ciou", "contrastive", "hungarian")


@dataclass
class GradcheckSummary:
    loss: str
    trials: int
    tol: float
    max_rel_err: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "trials": self.trials,
            "tol": self.tol,
            "max_rel_err": self.max_rel_err,
            "failures": self.failures,
        }


def _edges(b):
    cx, cy, w, h = b
    return (cx - w / 2, cx + w / 2), (cy - h / 2, cy + h / 2)


def generic_pair(p, g, margin: float = KINK_MARGIN) -> bool:
    """True when no edge of ``p`` is within ``margin`` of an edge of ``g``."""
    for (a1, a2), (b1, b2) in zip(_edges(p), _edges(g)):
        for x, y in itertools.product((a1, a2), (b1, b2)):
            if abs(x - y) < margin:
                return False
    return True


def random_ciou_pair(rng):
    while True:
        g = random_box(rng)
        if rng.random() < 0.5:
            p = g + rng.normal(0, [0.05, 0.05, 0.03, 0.03])
        else:
            p = random_box(rng)
        if p[2] > 0.02 and p[3] > 0.02 and generic_pair(p, g):
            return p, g


def check_ciou(trials: int, seed: int, tol: float, h: float = GRADCHECK_STEP) -> GradcheckSummary:
    out = GradcheckSummary("ciou", trials, tol)
    for t in range(trials):
        p, g = random_ciou_pair(stream(seed, 200, t))
        err = relative_error(ciou_grad(p, g), central_diff_grad(lambda x: ciou_loss(x, g), p, h))
        out.max_rel_err = max(out.max_rel_err, err)
        if err >= tol:
            out.failures.append({"trial": t, "rel_err": err})
    return out


def random_contrastive_batch(rng):
    n = int(rng.integers(1, 7))
    d = int(rng.integers(2, 9))
    w = rng.normal(size=(2 * n, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    partner = np.arange(2 * n) ^ 1
    if rng.random() < 0.5:
        perm = rng.permutation(2 * n)
        inv = np.argsort(perm)
        partner = perm[partner[inv]]  # relabelled involution
    tau = float(rng.uniform(0.05, 1.0))
    return w, partner, tau


def check_contrastive(trials: int, seed: int, tol: float, h: float = GRADCHECK_STEP) -> GradcheckSummary:
    out = GradcheckSummary("contrastive", trials, tol)
    for t in range(trials):
        w, partner, tau = random_contrastive_batch(stream(seed, 201, t))
        analytic = contrastive_grad(w, partner, tau)
        numeric = central_diff_grad(
            lambda x: contrastive_loss(x, partner, tau, check_unit=False), w, h
        )
        err = relative_error(analytic, numeric)
        out.max_rel_err = max(out.max_rel_err, err)
        if err >= tol:
            out.failures.append({"trial": t, "rel_err": err})
    return out


def _assignment_gap(c: np.ndarray) -> float:
    n_q, n_t = c.shape
    totals = sorted(
        sum(c[q, j] for j, q in enumerate(perm))
        for perm in itertools.permutations(range(n_q), n_t)
    )
    return totals[1] - totals[0] if len(totals) > 1 else np.inf


def random_scene_prediction(rng, n_classes: int = 3):
    """Predictions and ground truth with a unique, well-separated assignment."""
    while True:
        n_gt = int(rng.integers(0, 4))
        n_q = int(rng.integers(max(n_gt, 1), 6))
        gts = [(int(rng.integers(n_classes)), random_box(rng, 0.1, 0.4)) for _ in range(n_gt)]
        boxes = np.array([random_box(rng, 0.1, 0.4) for _ in range(n_q)])
        for j, (_, g) in enumerate(gts):
            boxes[j] = g + rng.normal(0, [0.03, 0.03, 0.02, 0.02])
        logits = rng.normal(0, 1.5, (n_q, n_classes + 1))
        if np.any(boxes[:, 2:] < 0.05):
            continue
        if not all(generic_pair(p, g) for p in boxes for _, g in gts):
            continue
        if any(np.min(np.abs(p - g)) < KINK_MARGIN for p in boxes for _, g in gts):
            continue
        preds = PredictionSet(logits, boxes)
        if gts:
            c = cost_matrix(preds.probs(), boxes, [l for l, _ in gts], [g for _, g in gts])
            if _assignment_gap(c) < 0.05:
                continue
        return preds, gts


def check_hungarian(trials: int, seed: int, tol: float, h: float = GRADCHECK_STEP) -> GradcheckSummary:
    out = GradcheckSummary("hungarian", trials, tol)
    for t in range(trials):
        preds, gts = random_scene_prediction(stream(seed, 202, t))
        res = hungarian_loss_and_grad(preds, gts)
        n_logit = preds.logits.size
        x0 = np.concatenate([preds.logits.ravel(), preds.boxes.ravel()])

        def f(x):
            p = PredictionSet(x[:n_logit].reshape(preds.logits.shape),
                              x[n_logit:].reshape(preds.boxes.shape))
            return hungarian_loss(p, gts)

        analytic = np.concatenate([res.logit_grad.ravel(), res.box_grad.ravel()])
        err = relative_error(analytic, central_diff_grad(f, x0, h))
        out.max_rel_err = max(out.max_rel_err, err)
        if err >= tol:
            out.failures.append({"trial": t, "rel_err": err})
    return out


CHECKERS = {
    "ciou": check_ciou,
    "contrastive": check_contrastive,
    "hungarian": check_hungarian,
}


def gradcheck(loss: str, trials: int = 100, seed: int = 0, tol: float = 1e-5) -> GradcheckSummary:
    if loss not in CHECKERS:
        raise ValueError(f"unknown loss {loss!r}; choose from {', '.join(LOSSES)}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return CHECKERS[loss](trials, seed, tol)
