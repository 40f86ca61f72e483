"""Reading and writing COCO-style ground truth and detection files."""

from __future__ import annotations

import json
import re
from pathlib import Path

from .evaluation import Detection, GroundTruthSet
from .geometry import BoxXyxy

_BBOX_KEY = re.compile(r'"bbox"\s*:')


class SchemaError(ValueError):
    """Input file parsed as JSON but does not follow the expected layout."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


def _read(path):
    text = Path(path).read_text()
    try:
        return text, json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(path, exc.lineno, f"malformed JSON: {exc.msg} (column {exc.colno})") from None


def _bbox_lines(text: str) -> list[int]:
    # Line of the n-th "bbox" key, used to point errors at the offending record.
    return [text.count("\n", 0, m.start()) + 1 for m in _BBOX_KEY.finditer(text)]


def _xywh(record, path, line, what):
    bbox = record.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise SchemaError(path, line, f"{what}: bbox must be [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise SchemaError(path, line, f"{what}: bbox entries must be numbers") from None
    if w <= 0 or h <= 0:
        raise SchemaError(path, line, f"{what}: non-positive box dims w={w}, h={h}")
    try:
        return BoxXyxy.from_xywh(x, y, w, h)
    except ValueError as exc:
        raise SchemaError(path, line, f"{what}: {exc}") from None


def _int_field(record, key, path, line, what):
    value = record.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, line, f"{what}: '{key}' must be an integer")
    return value


def load_ground_truth(path) -> GroundTruthSet:
    text, doc = _read(path)
    if not isinstance(doc, dict):
        raise SchemaError(path, 1, "ground truth must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(path, 1, f"missing '{key}' array")
    gts = GroundTruthSet()
    for i, cat in enumerate(doc["categories"]):
        if not isinstance(cat, dict):
            raise SchemaError(path, 1, f"categories[{i}] must be an object")
        cid = _int_field(cat, "id", path, 1, f"categories[{i}]")
        gts.categories[cid] = str(cat.get("name", cid))
    image_ids = set()
    for i, img in enumerate(doc["images"]):
        if not isinstance(img, dict):
            raise SchemaError(path, 1, f"images[{i}] must be an object")
        image_ids.add(_int_field(img, "id", path, 1, f"images[{i}]"))
    lines = _bbox_lines(text)
    seen_ids = set()
    for i, ann in enumerate(doc["annotations"]):
        line = lines[i] if i < len(lines) else 1
        what = f"annotations[{i}]"
        if not isinstance(ann, dict):
            raise SchemaError(path, line, f"{what} must be an object")
        image_id = _int_field(ann, "image_id", path, line, what)
        cid = _int_field(ann, "category_id", path, line, what)
        if "id" in ann:
            aid = _int_field(ann, "id", path, line, what)
            if aid in seen_ids:
                raise SchemaError(path, line, f"{what}: duplicate annotation id {aid}")
            seen_ids.add(aid)
        if image_ids and image_id not in image_ids:
            raise SchemaError(path, line, f"{what}: unknown image_id {image_id}")
        if gts.categories and cid not in gts.categories:
            raise SchemaError(path, line, f"{what}: unknown category_id {cid}")
        gts.add(image_id, cid, _xywh(ann, path, line, what))
    return gts


def load_detections(path) -> list[Detection]:
    text, doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError(path, 1, "detections must be a JSON array")
    lines = _bbox_lines(text)
    dets = []
    for i, rec in enumerate(doc):
        line = lines[i] if i < len(lines) else 1
        what = f"detections[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(path, line, f"{what} must be an object")
        score = rec.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise SchemaError(path, line, f"{what}: 'score' must be a number")
        try:
            dets.append(Detection(
                _int_field(rec, "image_id", path, line, what),
                _int_field(rec, "category_id", path, line, what),
                _xywh(rec, path, line, what),
                float(score),
            ))
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(path, line, f"{what}: {exc}") from None
    return dets


def ground_truth_doc(images, annotations, categories) -> dict:
    return {"images": images, "annotations": annotations, "categories": categories}


def xywh(box: BoxXyxy) -> list[float]:
    return [box.x1, box.y1, box.x2 - box.x1, box.y2 - box.y1]
