"""Match detections to ground-truth annotations under a spatio-temporal
criterion and compute precision / recall / F1 plus the timing-error
distribution.

A detection counts as correct when it lies within ``spatial_th`` pixels
(Euclidean) and ``temporal_th`` frames of an annotation; matching is
one-to-one and greedy in ascending (|frame delta|, distance, detection
index, annotation index) order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["MatchResult", "Scores", "match", "prf1", "f1_from_pr", "timing_histogram"]


def _point(obj) -> tuple:
    """Accept Detection-like objects or (frame, x, y[, ...]) tuples."""
    if hasattr(obj, "frame"):
        return obj.frame, obj.x, obj.y
    return obj[0], obj[1], obj[2]


@dataclass
class MatchResult:
    pairs: list  # (det index, ann index, signed frame delta, pixel distance)
    unmatched_detections: list  # detection indices (false positives)
    unmatched_annotations: list  # annotation indices (false negatives)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_detections)

    @property
    def fn(self) -> int:
        return len(self.unmatched_annotations)


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def match(detections, annotations, spatial_th: float = 10.0,
          temporal_th: int = 3) -> MatchResult:
    dets = [_point(d) for d in detections]
    anns = [_point(a) for a in annotations]
    candidates = []
    for di, (df, dx, dy) in enumerate(dets):
        for ai, (af, ax, ay) in enumerate(anns):
            delta = df - af
            if abs(delta) > temporal_th:
                continue
            dist = math.hypot(dx - ax, dy - ay)
            if dist <= spatial_th:
                candidates.append((abs(delta), dist, di, ai, delta))
    candidates.sort()
    det_used = [False] * len(dets)
    ann_used = [False] * len(anns)
    pairs = []
    for _, dist, di, ai, delta in candidates:
        if det_used[di] or ann_used[ai]:
            continue
        det_used[di] = True
        ann_used[ai] = True
        pairs.append((di, ai, delta, dist))
    return MatchResult(
        pairs,
        [i for i, used in enumerate(det_used) if not used],
        [i for i, used in enumerate(ann_used) if not used],
    )


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf1(result: MatchResult) -> Scores:
    tp, fp, fn = result.tp, result.fp, result.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Scores(precision, recall, f1_from_pr(precision, recall), tp, fp, fn)


def timing_histogram(result: MatchResult, max_abs: int = 5) -> list:
    """Counts of signed frame deltas (detected minus annotated) per bin in
    [-max_abs, max_abs]; deltas beyond the range land in the end bins."""
    counts = {d: 0 for d in range(-max_abs, max_abs + 1)}
    for _, _, delta, _ in result.pairs:
        counts[max(-max_abs, min(max_abs, delta))] += 1
    return sorted(counts.items())
