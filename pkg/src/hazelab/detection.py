"""Mean average precision over bounding-box detections.

Detections and ground truth are exchanged as JSON lines::

    {"image": "a.png", "class": "car", "bbox": [x_min, y_min, x_max, y_max], "score": 0.9}

Ground-truth records omit ``score``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RTTS_CLASSES = ("person", "bicycle", "bus", "car", "motorbike")


@dataclass(frozen=True, order=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_name: str
    bbox: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GtBox:
    image_id: str
    class_name: str
    bbox: BBox


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    classes: tuple[str, ...] | None = RTTS_CLASSES
    interpolation: str = "all-point"  # or "11-point"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.interpolation not in ("all-point", "11-point"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _det_order(d: Detection):
    return (-d.score, d.image_id, d.bbox.as_list())


def match_detections(dets: Sequence[Detection], gts: Sequence[GtBox], threshold: float = 0.5):
    """Greedy matching in descending score order.

    Returns ``(flags, n_gt)`` where ``flags[i]`` is True for a true positive,
    in the sorted detection order.
    """
    by_image: dict[str, list[GtBox]] = {}
    for g in gts:
        by_image.setdefault(g.image_id, []).append(g)
    for boxes in by_image.values():
        boxes.sort(key=lambda g: g.bbox.as_list())
    used = {img: [False] * len(boxes) for img, boxes in by_image.items()}
    flags = []
    for d in sorted(dets, key=_det_order):
        best, best_iou = -1, threshold
        for i, g in enumerate(by_image.get(d.image_id, ())):
            if used[d.image_id][i]:
                continue
            o = iou(d.bbox, g.bbox)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = i, o
        if best >= 0:
            used[d.image_id][best] = True
        flags.append(best >= 0)
    return flags, len(gts)


def average_precision(flags: Sequence[bool], n_gt: int, interpolation: str = "all-point") -> float:
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    if n_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    fp = np.arange(1, len(tp) + 1) - tp
    recall = tp / n_gt
    precision = tp / (tp + fp)
    if interpolation == "11-point":
        return float(np.mean([precision[recall >= r].max() if np.any(recall >= r) else 0.0
                              for r in np.linspace(0, 1, 11)]))
    # precision envelope: max precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


@dataclass
class MapResult:
    per_class: dict[str, float] = field(default_factory=dict)

    @property
    def mAP(self) -> float:
        return float(np.mean(list(self.per_class.values()))) if self.per_class else 0.0


def mean_ap(dets: Iterable[Detection], gts: Iterable[GtBox], cfg: EvalConfig = EvalConfig()) -> MapResult:
    """Per-class AP and their unweighted mean over classes present in the ground truth."""
    dets, gts = list(dets), list(gts)
    gt_classes = {g.class_name for g in gts}
    classes = sorted(gt_classes) if cfg.classes is None else [c for c in cfg.classes if c in gt_classes]
    result = MapResult()
    for c in classes:
        flags, n_gt = match_detections([d for d in dets if d.class_name == c],
                                       [g for g in gts if g.class_name == c], cfg.iou_threshold)
        result.per_class[c] = average_precision(flags, n_gt, cfg.interpolation)
    return result


# ---------------------------------------------------------------------------
# JSON lines


class RecordError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _read_records(path, with_score: bool):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec["bbox"], list) or len(rec["bbox"]) != 4:
                    raise ValueError("bbox must be a list of 4 numbers")
                bbox = BBox(*(float(v) for v in rec["bbox"]))
                image, cls = str(rec["image"]), str(rec["class"])
                if with_score:
                    out.append(Detection(image, cls, bbox, float(rec["score"])))
                else:
                    out.append(GtBox(image, cls, bbox))
            except (ValueError, KeyError, TypeError) as exc:
                raise RecordError(path, lineno, str(exc) or type(exc).__name__) from exc
    return out


def load_detections(path) -> list[Detection]:
    return _read_records(path, with_score=True)


def load_ground_truth(path) -> list[GtBox]:
    return _read_records(path, with_score=False)


def write_records(records: Iterable[Detection | GtBox], path) -> None:
    lines = []
    for r in records:
        rec = {"image": r.image_id, "class": r.class_name, "bbox": r.bbox.as_list()}
        if isinstance(r, Detection):
            rec["score"] = r.score
        lines.append(json.dumps(rec))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
