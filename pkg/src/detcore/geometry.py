"""Bounding boxes, IoU and the complete-IoU regression loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_ASPECT_SCALE = 4.0 / math.pi**2


@dataclass(frozen=True)
class BoxCxcywh:
    """Normalized center-size box; coordinates are fractions of the image."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside [0,1]: ({self.cx}, {self.cy})")

    @classmethod
    def from_array(cls, a) -> "BoxCxcywh":
        cx, cy, w, h = (float(x) for x in a)
        return cls(cx, cy, w, h)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class BoxXyxy:
    """Absolute corner box in pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"invalid box: {vals}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoxXyxy":
        return cls(x, y, x + w, y + h)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def shifted(self, dx: float, dy: float) -> "BoxXyxy":
        return BoxXyxy(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def convert(b: BoxCxcywh, img_w: float, img_h: float) -> BoxXyxy:
    """Normalized center form to absolute corners."""
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dims must be positive, got {img_w}x{img_h}")
    return BoxXyxy(
        (b.cx - b.w / 2) * img_w,
        (b.cy - b.h / 2) * img_h,
        (b.cx + b.w / 2) * img_w,
        (b.cy + b.h / 2) * img_h,
    )


def to_cxcywh(b: BoxXyxy, img_w: float, img_h: float) -> BoxCxcywh:
    """Inverse of :func:`convert`."""
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dims must be positive, got {img_w}x{img_h}")
    return BoxCxcywh(
        (b.x1 + b.x2) / 2 / img_w,
        (b.y1 + b.y2) / 2 / img_h,
        (b.x2 - b.x1) / img_w,
        (b.y2 - b.y1) / img_h,
    )


def iou(a: BoxXyxy, b: BoxXyxy) -> float:
    if not isinstance(a, BoxXyxy) or not isinstance(b, BoxXyxy):
        raise TypeError("iou expects BoxXyxy arguments")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _params(b) -> np.ndarray:
    # Loss functions accept raw arrays too, so gradient checks can step
    # centers slightly outside [0,1]; only sizes must stay positive.
    if isinstance(b, BoxCxcywh):
        return b.as_array()
    arr = np.asarray(b, dtype=np.float64).ravel()
    if arr.shape != (4,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"expected 4 finite box parameters, got {b!r}")
    if arr[2] <= 0 or arr[3] <= 0:
        raise ValueError(f"degenerate box: w={arr[2]}, h={arr[3]}")
    return arr


def _lt_weight(a: float, b: float) -> float:
    # d min(a, b) / da, splitting ties evenly between the two arguments
    if a < b:
        return 1.0
    if a == b:
        return 0.5
    return 0.0


def _ciou_parts(p: np.ndarray, g: np.ndarray):
    cx, cy, w, h = p
    gcx, gcy, gw, gh = g
    px1, px2 = cx - w / 2, cx + w / 2
    py1, py2 = cy - h / 2, cy + h / 2
    gx1, gx2 = gcx - gw / 2, gcx + gw / 2
    gy1, gy2 = gcy - gh / 2, gcy + gh / 2

    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    # areas from the same edges as the overlap, so identical boxes give IoU = 1 exactly
    union = (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter
    iou_val = inter / union

    ew = max(px2, gx2) - min(px1, gx1)
    eh = max(py2, gy2) - min(py1, gy1)
    c2 = ew * ew + eh * eh
    rho2 = (cx - gcx) ** 2 + (cy - gcy) ** 2

    angle_gap = math.atan(gw / gh) - math.atan(w / h)
    v = _ASPECT_SCALE * angle_gap**2
    denom = (1.0 - iou_val) + v
    alpha = v / denom if denom > 0 else 0.0
    return dict(
        px1=px1, px2=px2, py1=py1, py2=py2,
        gx1=gx1, gx2=gx2, gy1=gy1, gy2=gy2,
        iw=iw, ih=ih, inter=inter, union=union, iou=iou_val,
        ew=ew, eh=eh, c2=c2, rho2=rho2,
        angle_gap=angle_gap, v=v, alpha=alpha,
    )


def ciou_loss(pred, gt) -> float:
    """Complete-IoU loss ``1 - IoU + rho^2/c^2 + alpha*v`` of ``pred`` against ``gt``.

    Both boxes are in normalized center form. ``rho`` is the distance
    between centers, ``c`` the diagonal of the smallest enclosing box,
    ``v`` the aspect-ratio mismatch and ``alpha = v / ((1 - IoU) + v)``.
    """
    t = _ciou_parts(_params(pred), _params(gt))
    return 1.0 - t["iou"] + t["rho2"] / t["c2"] + t["alpha"] * t["v"]


def ciou_grad(pred, gt, detach_alpha: bool = False) -> np.ndarray:
    """Gradient of :func:`ciou_loss` w.r.t. ``(cx, cy, w, h)`` of ``pred``.

    By default this is the exact derivative, including the dependence of
    ``alpha`` on the boxes, so it agrees with finite differences. With
    ``detach_alpha=True`` alpha is frozen as a constant (the common
    training convention); that variant is not the true gradient.

    At corner coincidences (``min``/``max`` ties) each tied branch gets
    half the weight, which gives the symmetric subgradient; for
    ``pred == gt`` the result is the zero vector.
    """
    p = _params(pred)
    g = _params(gt)
    t = _ciou_parts(p, g)
    cx, cy, w, h = p
    gcx, gcy = g[0], g[1]

    # intersection w.r.t. the pred corners (x1, x2, y1, y2)
    if t["iw"] > 0 and t["ih"] > 0:
        diw_dx2 = _lt_weight(t["px2"], t["gx2"])
        diw_dx1 = -_lt_weight(t["gx1"], t["px1"])
        dih_dy2 = _lt_weight(t["py2"], t["gy2"])
        dih_dy1 = -_lt_weight(t["gy1"], t["py1"])
        d_inter_x1 = diw_dx1 * t["ih"]
        d_inter_x2 = diw_dx2 * t["ih"]
        d_inter_y1 = dih_dy1 * t["iw"]
        d_inter_y2 = dih_dy2 * t["iw"]
    else:
        d_inter_x1 = d_inter_x2 = d_inter_y1 = d_inter_y2 = 0.0

    d_inter = np.array([
        d_inter_x1 + d_inter_x2,
        d_inter_y1 + d_inter_y2,
        (d_inter_x2 - d_inter_x1) / 2,
        (d_inter_y2 - d_inter_y1) / 2,
    ])
    d_area = np.array([0.0, 0.0, t["py2"] - t["py1"], t["px2"] - t["px1"]])
    d_union = d_area - d_inter
    union = t["union"]
    d_iou = (d_inter * union - t["inter"] * d_union) / union**2

    dew_dx2 = _lt_weight(t["gx2"], t["px2"])
    dew_dx1 = -_lt_weight(t["px1"], t["gx1"])
    deh_dy2 = _lt_weight(t["gy2"], t["py2"])
    deh_dy1 = -_lt_weight(t["py1"], t["gy1"])
    d_ew = np.array([dew_dx1 + dew_dx2, 0.0, (dew_dx2 - dew_dx1) / 2, 0.0])
    d_eh = np.array([0.0, deh_dy1 + deh_dy2, 0.0, (deh_dy2 - deh_dy1) / 2])
    d_c2 = 2 * t["ew"] * d_ew + 2 * t["eh"] * d_eh
    d_rho2 = np.array([2 * (cx - gcx), 2 * (cy - gcy), 0.0, 0.0])
    c2 = t["c2"]
    d_dist = d_rho2 / c2 - t["rho2"] * d_c2 / c2**2

    r2 = w * w + h * h
    coef = 2 * _ASPECT_SCALE * t["angle_gap"]
    d_v = np.array([0.0, 0.0, -coef * h / r2, coef * w / r2])

    alpha = t["alpha"]
    if detach_alpha:
        d_aspect = alpha * d_v
    else:
        # d(v^2 / (1 - IoU + v)) = alpha (2 - alpha) dv + alpha^2 dIoU
        d_aspect = alpha * (2 - alpha) * d_v + alpha**2 * d_iou

    return -d_iou + d_dist + d_aspect
