"""Numerical core for contrastive pre-training and set-prediction detection.

Submodules: ``numerics``, ``geometry``, ``matching``, ``losses``,
``attention``, ``evaluation``, ``synthdata``, ``trainer`` and ``cli``.
"""

from .geometry import BoxCxcywh, BoxXyxy, ciou_grad, ciou_loss, convert, iou
from .losses import (
    LossWeights,
    PredictionSet,
    box_loss,
    contrastive_grad,
    contrastive_loss,
    hungarian_loss,
    hungarian_loss_grad,
)
from .matching import Assignment, brute_force, hungarian, optimal_assignment

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BoxCxcywh",
    "BoxXyxy",
    "LossWeights",
    "PredictionSet",
    "box_loss",
    "brute_force",
    "ciou_grad",
    "ciou_loss",
    "contrastive_grad",
    "contrastive_loss",
    "convert",
    "hungarian",
    "hungarian_loss",
    "hungarian_loss_grad",
    "iou",
    "optimal_assignment",
]
