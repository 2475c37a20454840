"""IoU, greedy score-ordered matching, and 101-point interpolated AP.

The protocol is the standard COCO one: detections are capped at 100 per
image, matched greedily in descending score order against same-category
ground truth of the same image, and AP is the mean over the 10-threshold
IoU grid and over all categories that have at least one ground truth.

All ties (equal scores, equal IoUs) break by input order, so results are
invariant to the order records appear in the input files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Annotation, BoundingBox, Dataset, Detection

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_GRID: tuple[float, ...] = tuple(round(0.01 * i, 2) for i in range(101))
MAX_DETECTIONS_PER_IMAGE = 100

_AP50_INDEX = IOU_THRESHOLDS.index(0.5)
_AP75_INDEX = IOU_THRESHOLDS.index(0.75)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when they do not overlap."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if ix <= 0:
        return 0.0
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _iou_matrix(det_boxes: Sequence[BoundingBox], gt_boxes: Sequence[BoundingBox]) -> np.ndarray:
    """IoU of every det box against every gt box, shape (n_det, n_gt)."""
    if not det_boxes or not gt_boxes:
        return np.zeros((len(det_boxes), len(gt_boxes)))
    d = np.array([b.as_list() for b in det_boxes])
    g = np.array([b.as_list() for b in gt_boxes])
    ix = np.minimum(d[:, None, 0] + d[:, None, 2], g[None, :, 0] + g[None, :, 2]) \
        - np.maximum(d[:, None, 0], g[None, :, 0])
    iy = np.minimum(d[:, None, 1] + d[:, None, 3], g[None, :, 1] + g[None, :, 3]) \
        - np.maximum(d[:, None, 1], g[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = (d[:, 2] * d[:, 3])[:, None] + (g[:, 2] * g[:, 3])[None, :] - inter
    return inter / union


def _greedy_assign(ious: np.ndarray, threshold: float) -> list[int | None]:
    """Assign each det row (already score-ordered) its best free gt column.

    A det takes the highest-IoU unmatched gt if that IoU is >= threshold;
    ties between gts break on the first (input-order) occurrence.
    """
    n_det, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    out: list[int | None] = []
    for d in range(n_det):
        if n_gt == 0 or taken.all():
            out.append(None)
            continue
        row = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(row))
        if row[g] >= threshold:
            taken[g] = True
            out.append(g)
        else:
            out.append(None)
    return out


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one image/category cell at one threshold.

    ``matched_gt[i]`` is the matched annotation id for ``detections[i]`` or
    None; ``gt_matched_det[j]`` is the matching detection index for
    ``gt_ids[j]`` or None.
    """

    detections: tuple[Detection, ...]
    matched_gt: tuple[int | None, ...]
    gt_ids: tuple[int, ...]
    gt_matched_det: tuple[int | None, ...]
    iou_threshold: float


def match_greedy(dets: Sequence[Detection], gts: Sequence[Annotation], threshold: float) -> MatchResult:
    """Match score-sorted detections against ground truth at one threshold.

    ``dets`` must already be sorted by descending score (stable). Each gt is
    matched at most once; a det matches the highest-IoU free gt at or above
    the threshold.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    ious = _iou_matrix([d.bbox for d in dets], [g.bbox for g in gts])
    assign = _greedy_assign(ious, threshold)
    gt_matched: list[int | None] = [None] * len(gts)
    matched_ids: list[int | None] = []
    for d, g in enumerate(assign):
        if g is None:
            matched_ids.append(None)
        else:
            matched_ids.append(gts[g].id)
            gt_matched[g] = d
    return MatchResult(
        detections=tuple(dets),
        matched_gt=tuple(matched_ids),
        gt_ids=tuple(g.id for g in gts),
        gt_matched_det=tuple(gt_matched),
        iou_threshold=threshold,
    )


def _interpolated_ap(tp_sorted: np.ndarray, n_gt: int) -> float:
    """AP from score-ordered TP flags: 101-point interpolated precision mean.

    Precision at recall r is the maximum precision over all operating points
    whose recall is >= r; points past the last detection contribute zero.
    """
    if n_gt == 0 or tp_sorted.size == 0:
        return 0.0
    tp = np.cumsum(tp_sorted.astype(np.float64))
    ranks = np.arange(1, tp_sorted.size + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / n_gt
    # running max from the right = best precision at this recall or beyond
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    valid = idx < recall.size
    return float(envelope[idx[valid]].sum() / len(RECALL_GRID))


def average_precision(matches: Iterable[MatchResult], n_gt: int) -> float:
    """Pool per-image match results for one category into a single AP.

    Detections from all results are globally re-ranked by (-score, input
    order); a detection counts as TP when its ``matched_gt`` entry is set.
    ``n_gt`` is the category's total ground-truth count. Returns 0.0 when
    ``n_gt`` is 0.
    """
    scores: list[float] = []
    flags: list[bool] = []
    for m in matches:
        for det, gt_id in zip(m.detections, m.matched_gt):
            scores.append(det.score)
            flags.append(gt_id is not None)
    if not scores:
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp_sorted = np.array([flags[i] for i in order], dtype=bool)
    return _interpolated_ap(tp_sorted, n_gt)


@dataclass(frozen=True)
class ApTriple:
    ap: float
    ap50: float
    ap75: float


@dataclass(frozen=True)
class EvalSummary:
    """Dataset-level AP plus the per-category breakdown.

    ``ap`` averages over the full IoU grid; ``ap50``/``ap75`` are the single
    thresholds 0.50 and 0.75. ``per_category`` maps category id to its
    triple, only for categories with at least one ground truth; the overall
    numbers are plain means over those categories.
    """

    ap: float
    ap50: float
    ap75: float
    per_category: dict[int, ApTriple]
    n_detections: int
    n_ground_truths: int


def _cap_per_image(dets: Sequence[Detection], limit: int) -> list[tuple[int, Detection]]:
    """Keep the ``limit`` best-scoring detections per image (input order on ties)."""
    by_image: dict[int, list[tuple[int, Detection]]] = {}
    for i, d in enumerate(dets):
        by_image.setdefault(d.image_id, []).append((i, d))
    kept: list[tuple[int, Detection]] = []
    for img_id in by_image:
        rows = by_image[img_id]
        if len(rows) > limit:
            rows = sorted(rows, key=lambda r: (-r[1].score, r[0]))[:limit]
            rows.sort(key=lambda r: r[0])
        kept.extend(rows)
    kept.sort(key=lambda r: r[0])
    return kept


def evaluate(gt: Dataset, dets: Sequence[Detection], *, max_dets: int = MAX_DETECTIONS_PER_IMAGE) -> EvalSummary:
    """Score detections against a dataset under the full IoU grid.

    Crowd annotations are excluded from evaluation entirely. Detections for
    images or categories absent from ``gt`` simply never match (they still
    count as false positives for their category if it has ground truth
    elsewhere). Categories without any ground truth are skipped.
    """
    gt_pool = gt.non_crowd

    kept = _cap_per_image(dets, max_dets)

    det_cells: dict[tuple[int, int], list[tuple[int, Detection]]] = {}
    for i, d in kept:
        det_cells.setdefault((d.image_id, d.category_id), []).append((i, d))
    gt_cells: dict[tuple[int, int], list[Annotation]] = {}
    gt_count: dict[int, int] = {}
    for a in gt_pool:
        gt_cells.setdefault((a.image_id, a.category_id), []).append(a)
        gt_count[a.category_id] = gt_count.get(a.category_id, 0) + 1

    n_thr = len(IOU_THRESHOLDS)
    thr = np.array(IOU_THRESHOLDS)

    per_category: dict[int, ApTriple] = {}
    ap_grid: list[np.ndarray] = []
    for cat in sorted(gt_count):
        cat_scores: list[float] = []
        cat_index: list[int] = []
        cat_tp: list[np.ndarray] = []
        for img in {img for img, c in det_cells if c == cat}:
            rows = sorted(det_cells[img, cat], key=lambda r: (-r[1].score, r[0]))
            gts = gt_cells.get((img, cat), [])
            ious = _iou_matrix([r[1].bbox for r in rows], [g.bbox for g in gts])
            tp = np.zeros((len(rows), n_thr), dtype=bool)
            for t in range(n_thr):
                for d, g in enumerate(_greedy_assign(ious, float(thr[t]))):
                    if g is not None:
                        tp[d, t] = True
            for idx, det in rows:
                cat_scores.append(det.score)
                cat_index.append(idx)
            cat_tp.append(tp)
        n_gt_cat = gt_count[cat]
        if cat_scores:
            tp_all = np.concatenate(cat_tp, axis=0)
            order = sorted(range(len(cat_scores)), key=lambda i: (-cat_scores[i], cat_index[i]))
            tp_all = tp_all[np.array(order)]
            aps = np.array([_interpolated_ap(tp_all[:, t], n_gt_cat) for t in range(n_thr)])
        else:
            aps = np.zeros(n_thr)
        ap_grid.append(aps)
        per_category[cat] = ApTriple(
            ap=float(aps.mean()), ap50=float(aps[_AP50_INDEX]), ap75=float(aps[_AP75_INDEX]),
        )

    if ap_grid:
        grid = np.stack(ap_grid)
        ap = float(grid.mean())
        ap50 = float(grid[:, _AP50_INDEX].mean())
        ap75 = float(grid[:, _AP75_INDEX].mean())
    else:
        ap = ap50 = ap75 = 0.0

    return EvalSummary(
        ap=ap,
        ap50=ap50,
        ap75=ap75,
        per_category=per_category,
        n_detections=len(kept),
        n_ground_truths=len(gt_pool),
    )
