"""Detection evaluation: greedy IoU matching, 101-point interpolated AP
with a per-image prediction cap, a fixed-budget mode with an enlarged
per-image cap plus a dataset-wide per-class cap, and split means over
rare/common/frequent category tags.

Tie-breaking is total (score desc, image_id asc, insertion index asc) so
a given input always yields a bit-identical report; with distinct scores
the result is also independent of input ordering.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import Box2D, Instance
from .errors import DanglingReferenceError

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

FREQUENCIES = ("rare", "common", "frequent")


@dataclass(frozen=True)
class Detection:
    """A scored predicted box. origin records whether it came from the
    decoder or the encoder supplement."""

    image_id: int
    category_id: int
    box: Box2D
    score: float
    origin: str = "decoder"

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be finite in [0, 1], got {self.score}")
        if self.origin not in ("decoder", "supplement"):
            raise ValueError(f"origin must be 'decoder' or 'supplement', got {self.origin!r}")


@dataclass(frozen=True)
class CategoryInfo:
    id: int
    name: str
    frequency: Optional[str] = None  # "rare" | "common" | "frequent" | None

    def __post_init__(self):
        if self.frequency is not None and self.frequency not in FREQUENCIES:
            raise ValueError(f"frequency must be one of {FREQUENCIES}, got {self.frequency!r}")


@dataclass(frozen=True)
class EvalDataset:
    """Ground truth per image, the category table, and the detections."""

    ground_truth: Mapping[int, Tuple[Instance, ...]]
    categories: Mapping[int, CategoryInfo]
    detections: Tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "ground_truth",
                           {int(k): tuple(v) for k, v in self.ground_truth.items()})
        object.__setattr__(self, "detections", tuple(self.detections))
        for img_id, insts in self.ground_truth.items():
            for inst in insts:
                if inst.category_id not in self.categories:
                    raise DanglingReferenceError(
                        f"ground truth in image {img_id} references unknown category "
                        f"{inst.category_id}"
                    )
        for d in self.detections:
            if d.image_id not in self.ground_truth:
                raise DanglingReferenceError(f"detection references unknown image {d.image_id}")
            if d.category_id not in self.categories:
                raise DanglingReferenceError(
                    f"detection references unknown category {d.category_id}"
                )


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    per_image_cap: int = 300
    mode: str = "standard"  # "standard" | "fixed"
    per_class_global_cap: int = 10000

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts:
            raise ValueError("iou_thresholds must be non-empty")
        for a, b in zip(ts, ts[1:]):
            if not a < b:
                raise ValueError(f"iou_thresholds must be strictly increasing, got {ts}")
        if not (0.0 < ts[0] and ts[-1] <= 1.0):
            raise ValueError(f"iou_thresholds must lie in (0, 1], got {ts}")
        if self.per_image_cap < 1:
            raise ValueError(f"per_image_cap must be >= 1, got {self.per_image_cap}")
        if self.mode not in ("standard", "fixed"):
            raise ValueError(f"mode must be 'standard' or 'fixed', got {self.mode!r}")
        if self.per_class_global_cap < 1:
            raise ValueError(f"per_class_global_cap must be >= 1, got {self.per_class_global_cap}")

    @classmethod
    def standard(cls, **kw) -> "EvalConfig":
        kw.setdefault("per_image_cap", 300)
        return cls(mode="standard", **kw)

    @classmethod
    def fixed(cls, **kw) -> "EvalConfig":
        kw.setdefault("per_image_cap", 1000)
        return cls(mode="fixed", **kw)


# ---------------------------------------------------------------------------
# Matching and AP
# ---------------------------------------------------------------------------

def _pairwise_iou(det_boxes: Sequence[Box2D], gt_boxes: Sequence[Box2D]) -> np.ndarray:
    """IoU matrix (n_dets x n_gts), vectorized over corner-form arrays."""
    if not det_boxes or not gt_boxes:
        return np.zeros((len(det_boxes), len(gt_boxes)))
    d = np.array([b.as_tuple() for b in det_boxes])
    g = np.array([b.as_tuple() for b in gt_boxes])
    ix = np.minimum(d[:, None, 2], g[None, :, 2]) - np.maximum(d[:, None, 0], g[None, :, 0])
    iy = np.minimum(d[:, None, 3], g[None, :, 3]) - np.maximum(d[:, None, 1], g[None, :, 1])
    inter = np.maximum(ix, 0.0) * np.maximum(iy, 0.0)
    area_d = (d[:, 2] - d[:, 0]) * (d[:, 3] - d[:, 1])
    area_g = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    union = area_d[:, None] + area_g[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def _greedy_flags(iou_matrix: np.ndarray, iou_threshold: float) -> List[bool]:
    """Greedy matching walk over a detection x ground-truth IoU matrix.

    Detections are rows in descending score order; each takes the unmatched
    ground truth of highest IoU >= threshold, IoU ties breaking toward the
    lower GT index (first argmax).
    """
    n_dets, n_gts = iou_matrix.shape
    if n_gts == 0:
        return [False] * n_dets
    free = np.ones(n_gts, dtype=bool)
    flags = []
    for i in range(n_dets):
        row = np.where(free, iou_matrix[i], -1.0)
        j = int(np.argmax(row))
        # zero-overlap pairs never match, even at a zero threshold
        if row[j] >= iou_threshold and row[j] > 0.0:
            free[j] = False
            flags.append(True)
        else:
            flags.append(False)
    return flags


def match_greedy(
    dets: Sequence[Detection],
    gts: Sequence[Box2D],
    iou_threshold: float,
) -> List[bool]:
    """TP/FP flags for detections of one image and category, already sorted
    by descending score. Each detection takes the unmatched ground truth of
    highest IoU >= threshold; IoU ties break toward the lower GT index."""
    return _greedy_flags(_pairwise_iou([d.box for d in dets], gts), iou_threshold)


def average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP from TP/FP flags in score order.

    Precision is made non-increasing in recall (upper envelope), then
    sampled at recalls 0.00, 0.01, ..., 1.00; points beyond the achieved
    recall contribute zero.
    """
    if n_gt <= 0:
        return 0.0
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    n = len(flags)
    recall = tp / n_gt
    precision = tp / np.arange(1, n + 1, dtype=np.float64)
    # upper envelope from the right
    for i in range(n - 2, -1, -1):
        if precision[i] < precision[i + 1]:
            precision[i] = precision[i + 1]
    recall_points = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, recall_points, side="left")
    sampled = np.where(idx < n, precision[np.minimum(idx, n - 1)], 0.0)
    return float(sampled.mean())


# ---------------------------------------------------------------------------
# Full evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap_rare: Optional[float]
    ap_common: Optional[float]
    ap_frequent: Optional[float]
    per_threshold: Dict[float, float]
    per_category: Dict[int, float]
    n_images: int
    n_categories: int
    n_detections_used: int
    mode: str

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ap": self.ap,
            "ap_rare": self.ap_rare,
            "ap_common": self.ap_common,
            "ap_frequent": self.ap_frequent,
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "per_category": {str(c): v for c, v in self.per_category.items()},
            "n_images": self.n_images,
            "n_categories": self.n_categories,
            "n_detections_used": self.n_detections_used,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def format_table(self, categories: Optional[Mapping[int, CategoryInfo]] = None) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{v:6.4f}"

        lines = [
            f"{'metric':<14}{'value':>8}",
            f"{'-' * 22}",
            f"{'AP':<14}{fmt(self.ap):>8}",
            f"{'AP_rare':<14}{fmt(self.ap_rare):>8}",
            f"{'AP_common':<14}{fmt(self.ap_common):>8}",
            f"{'AP_frequent':<14}{fmt(self.ap_frequent):>8}",
        ]
        for t in sorted(self.per_threshold):
            lines.append(f"{'AP@%.2f' % t:<14}{fmt(self.per_threshold[t]):>8}")
        lines.append(f"{'-' * 22}")
        for c in sorted(self.per_category):
            name = categories[c].name if categories and c in categories else str(c)
            lines.append(f"{name[:13]:<14}{fmt(self.per_category[c]):>8}")
        return "\n".join(lines)


def _ranked_detections(detections: Sequence[Detection]) -> List[Detection]:
    """Total order: score desc, image_id asc, insertion index asc."""
    keyed = sorted(
        enumerate(detections), key=lambda kv: (-kv[1].score, kv[1].image_id, kv[0])
    )
    return [d for _, d in keyed]


def evaluate(ds: EvalDataset, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """AP report over all categories with at least one ground truth box.

    Per image, only the top per_image_cap detections by score survive; in
    fixed mode each category is additionally capped dataset-wide at
    per_class_global_cap. AP averages the 101-point value over IoU
    thresholds and categories; split means follow the frequency tags.
    """
    ranked = _ranked_detections(ds.detections)

    kept: List[Detection] = []
    per_image: Dict[int, int] = {}
    for d in ranked:
        c = per_image.get(d.image_id, 0)
        if c < cfg.per_image_cap:
            per_image[d.image_id] = c + 1
            kept.append(d)
    if cfg.mode == "fixed":
        survivors: List[Detection] = []
        per_class: Dict[int, int] = {}
        for d in kept:
            c = per_class.get(d.category_id, 0)
            if c < cfg.per_class_global_cap:
                per_class[d.category_id] = c + 1
                survivors.append(d)
        kept = survivors

    gt_count: Dict[int, int] = {}
    gt_boxes: Dict[Tuple[int, int], List[Box2D]] = {}
    for img_id, insts in ds.ground_truth.items():
        for inst in insts:
            gt_count[inst.category_id] = gt_count.get(inst.category_id, 0) + 1
            gt_boxes.setdefault((img_id, inst.category_id), []).append(inst.box)

    dets_by_cat: Dict[int, List[Detection]] = {}
    for d in kept:
        dets_by_cat.setdefault(d.category_id, []).append(d)

    eval_cats = sorted(c for c, n in gt_count.items() if n > 0)
    per_category: Dict[int, float] = {}
    per_threshold_acc: Dict[float, List[float]] = {t: [] for t in cfg.iou_thresholds}
    for cat in eval_cats:
        cat_dets = dets_by_cat.get(cat, [])
        image_ids = sorted({d.image_id for d in cat_dets})
        # one IoU matrix per image, shared by every threshold
        per_image_work = []
        for img in image_ids:
            positions = [p for p, d in enumerate(cat_dets) if d.image_id == img]
            matrix = _pairwise_iou(
                [cat_dets[p].box for p in positions], gt_boxes.get((img, cat), [])
            )
            per_image_work.append((positions, matrix))
        aps = []
        for t in cfg.iou_thresholds:
            # match per image, then stitch flags back in global rank order
            flag_by_pos: Dict[int, bool] = {}
            for positions, matrix in per_image_work:
                for p, f in zip(positions, _greedy_flags(matrix, t)):
                    flag_by_pos[p] = f
            ordered_flags = [flag_by_pos[p] for p in range(len(cat_dets))]
            ap_t = average_precision(ordered_flags, gt_count[cat])
            aps.append(ap_t)
            per_threshold_acc[t].append(ap_t)
        per_category[cat] = float(np.mean(aps)) if aps else 0.0

    def split_mean(tag: str) -> Optional[float]:
        vals = [
            per_category[c]
            for c in eval_cats
            if ds.categories[c].frequency == tag
        ]
        return float(np.mean(vals)) if vals else None

    overall = float(np.mean([per_category[c] for c in eval_cats])) if eval_cats else 0.0
    per_threshold = {
        t: (float(np.mean(v)) if v else 0.0) for t, v in per_threshold_acc.items()
    }
    return EvalReport(
        ap=overall,
        ap_rare=split_mean("rare"),
        ap_common=split_mean("common"),
        ap_frequent=split_mean("frequent"),
        per_threshold=per_threshold,
        per_category=per_category,
        n_images=len(ds.ground_truth),
        n_categories=len(eval_cats),
        n_detections_used=len(kept),
        mode=cfg.mode,
    )


# ---------------------------------------------------------------------------
# Constructed budget-gain scenario
# ---------------------------------------------------------------------------

def _grid_box(i: int, size: float = 20.0, gap: float = 10.0, cols: int = 40) -> Box2D:
    x = (i % cols) * (size + gap)
    y = (i // cols) * (size + gap)
    return Box2D(x, y, x + size, y + size)


def build_supplement_scenario(
    n_objects: int = 400,
    n_images: int = 3,
    decoder_cap: int = 300,
    supplement_budget: int = 100,
) -> EvalDataset:
    """Synthetic dataset with more objects per image than the decoder can
    emit. Decoder detections exactly match the first decoder_cap ground
    truths; supplements (lower-scored) cover the remainder, then pure
    false positives once ground truths run out."""
    if n_objects <= decoder_cap:
        raise ValueError("scenario requires n_objects > decoder_cap")
    categories = {0: CategoryInfo(id=0, name="object", frequency="common")}
    gts: Dict[int, Tuple[Instance, ...]] = {}
    dets: List[Detection] = []
    total = decoder_cap + supplement_budget
    for img in range(n_images):
        gts[img] = tuple(
            Instance(box=_grid_box(i), category_id=0, image_id=img)
            for i in range(n_objects)
        )
        for i in range(min(total, n_objects)):
            origin = "decoder" if i < decoder_cap else "supplement"
            hi = 0.90 if i < decoder_cap else 0.40
            dets.append(
                Detection(
                    image_id=img,
                    category_id=0,
                    box=_grid_box(i),
                    score=hi - i * 1e-4,
                    origin=origin,
                )
            )
        # leftover supplement budget emits false positives in empty space
        for j in range(max(0, total - n_objects)):
            far = _grid_box(n_objects + j)
            dets.append(
                Detection(
                    image_id=img, category_id=0, box=far,
                    score=0.10 - j * 1e-5, origin="supplement",
                )
            )
    return EvalDataset(ground_truth=gts, categories=categories, detections=tuple(dets))


def supplement_gain_scenario(
    n_objects: int = 400,
    n_images: int = 3,
    decoder_cap: int = 300,
    supplement_budget: int = 100,
    large_cap: int = 1000,
) -> Tuple[float, float]:
    """AP of the constructed scenario under the standard per-image cap vs
    the enlarged cap; the enlarged cap can only help."""
    ds = build_supplement_scenario(n_objects, n_images, decoder_cap, supplement_budget)
    ap_standard = evaluate(ds, EvalConfig.standard(per_image_cap=decoder_cap)).ap
    ap_large = evaluate(ds, EvalConfig.fixed(per_image_cap=large_cap)).ap
    assert ap_large >= ap_standard
    return ap_standard, ap_large
