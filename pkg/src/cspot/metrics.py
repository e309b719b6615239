"""Overlap metrics and retrieval MAP."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .maps import Box

__all__ = [
    "OVERLAPS",
    "EvalReport",
    "GtWord",
    "average_precision",
    "evaluate",
    "iou",
    "iow",
    "load_ground_truth",
    "write_ground_truth",
    "x_iou",
]

logger = logging.getLogger(__name__)

X_IOU_GATE = 0.1


@dataclass(frozen=True)
class GtWord:
    """Annotated word; ``box`` is in pixel space."""

    page_id: str
    text: str
    box: Box

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"ground-truth word on page {self.page_id!r} has empty text")

    def to_json(self):
        return {"page_id": self.page_id, "text": self.text, "box": list(self.box.as_xyxy())}

    @classmethod
    def from_json(cls, obj):
        return cls(str(obj["page_id"]), str(obj["text"]), Box.from_xyxy(*obj["box"]))


def load_ground_truth(path):
    with open(path, encoding="utf-8") as fh:
        return [GtWord.from_json(obj) for obj in json.load(fh)]


def write_ground_truth(words, path):
    payload = [w.to_json() for w in words]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def _box(obj):
    return obj.box if hasattr(obj, "box") else obj


def iou(a, b):
    a, b = _box(a), _box(b)
    inter = a.intersection(b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def x_iou(det, gt):
    """Column-interval IoU, gated on a plain IoU strictly above 0.1."""
    det, gt = _box(det), _box(gt)
    if iou(det, gt) <= X_IOU_GATE:
        return 0.0
    inter = min(det.col_end, gt.col_end) - max(det.col_start, gt.col_start)
    union = max(det.col_end, gt.col_end) - min(det.col_start, gt.col_start)
    return max(inter, 0) / union


def iow(det, gt, others=()):
    """Intersection over (gt area + overlap of ``det`` with every other word).

    Enlarging ``det`` is free as long as it does not cover neighbouring
    words; ``others`` must not contain ``gt`` itself.
    """
    det, gt = _box(det), _box(gt)
    inter = det.intersection(gt)
    if inter == 0:
        return 0.0
    wrong = sum(det.intersection(_box(o)) for o in others)
    return inter / (gt.area + wrong)


OVERLAPS = {"iou": iou, "x_iou": x_iou, "iow": iow}


def _overlap(metric, det_box, gt, page_words):
    if metric == "iow":
        return iow(det_box, gt, [w for w in page_words if w is not gt])
    return OVERLAPS[metric](det_box, gt.box)


def average_precision(ranked, gts, overlap="iou", threshold=0.5, page_words=None):
    """AP of one query's ranked detections.

    Detections are walked in the given order; each one claims the unclaimed
    ground-truth instance on its page with the highest overlap, and counts as
    relevant when that overlap reaches ``threshold``.  ``page_words`` lists
    every annotated word (any text) and is only needed for IoW; it defaults
    to ``gts``.
    """
    if overlap not in OVERLAPS:
        raise ValueError(f"unknown overlap metric {overlap!r}")
    if not gts:
        raise ValueError("average_precision needs at least one ground-truth instance")
    words_by_page = {}
    for w in (gts if page_words is None else page_words):
        words_by_page.setdefault(w.page_id, []).append(w)
    gts_by_page = {}
    for g in gts:
        gts_by_page.setdefault(g.page_id, []).append(g)

    claimed = set()
    hits = 0
    precision_sum = 0.0
    for rank, det in enumerate(ranked, start=1):
        best, best_gt = 0.0, None
        for g in gts_by_page.get(det.page_id, ()):
            if id(g) in claimed:
                continue
            ov = _overlap(overlap, det.box, g, words_by_page.get(det.page_id, ()))
            if ov > best:
                best, best_gt = ov, g
        if best_gt is not None and best >= threshold:
            claimed.add(id(best_gt))
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(gts)


@dataclass
class EvalReport:
    map_value: float
    per_query_ap: dict
    overlap_metric: str
    threshold: float
    excluded: list = field(default_factory=list)

    def to_dict(self):
        return {
            "map": self.map_value,
            "overlap_metric": self.overlap_metric,
            "threshold": self.threshold,
            "n_queries": len(self.per_query_ap),
            "per_query_ap": dict(sorted(self.per_query_ap.items())),
            "excluded_queries": sorted(self.excluded),
        }

    def format_table(self):
        lines = [f"{'query':<20} {'AP':>8}"]
        for q, ap in sorted(self.per_query_ap.items()):
            lines.append(f"{q:<20} {ap:8.4f}")
        lines.append(f"{'MAP':<20} {self.map_value:8.4f}  "
                     f"({self.overlap_metric} >= {self.threshold:g}, {len(self.per_query_ap)} queries)")
        return "\n".join(lines)


def rank_merge(dets):
    """Global ranking across pages: score descending, then page and box."""
    return sorted(dets, key=lambda d: (-d.score, d.page_id, d.box.as_tuple()))


def evaluate(all_dets, all_gts, queries=None, overlap="iou", threshold=0.5):
    """MAP over queries.

    ``all_dets`` maps each query to its detections (pixel space) across all
    pages.  Queries without any ground-truth instance are excluded with a
    warning.
    """
    if queries is None:
        queries = list(all_dets)
    by_text = {}
    for g in all_gts:
        by_text.setdefault(g.text, []).append(g)
    per_query, excluded = {}, []
    for q in queries:
        gts = by_text.get(q)
        if not gts:
            logger.warning("query %r has no ground-truth instance; excluded from MAP", q)
            excluded.append(q)
            continue
        ranked = rank_merge(all_dets.get(q, ()))
        per_query[q] = average_precision(ranked, gts, overlap, threshold, all_gts)
    map_value = float(np.mean(list(per_query.values()))) if per_query else 0.0
    return EvalReport(map_value, per_query, overlap, float(threshold), excluded)
