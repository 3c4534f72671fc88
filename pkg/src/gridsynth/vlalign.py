"""Vision-text alignment: calibrated cosine similarity head, the
IoU-modulated contrastive classification loss with analytic gradients,
composite detection loss, similarity-ranked query selection, and the
encoder-candidate supplement used to enlarge per-image prediction sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .core import Box2D, box_to_cxcywh, giou, iou
from .detmetrics import Detection
from .errors import (
    BudgetExceedsRowsError,
    DimensionMismatchError,
    KTooLargeError,
    ZeroNormRowError,
)

PROB_EPS = 1e-7

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-per-item real matrix; rows are normalized on demand by the
    similarity head, not at construction."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {arr.shape}")
        if np.isnan(arr).any():
            raise ValueError("embeddings contain NaN")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AlignmentHeadParams:
    """Affine calibration of the cosine similarity: logit = alpha * cos + beta.

    The large negative default bias reflects that negatives vastly
    outnumber positives.
    """

    alpha: float = math.log(15.0)
    beta: float = -math.log(100.0)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    gamma: float = 2.0
    lambda_neg: float = 0.5

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_l1", "lambda_giou", "gamma", "lambda_neg"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class QueryBudget:
    """Prediction budget: fixed decoder queries plus encoder supplements.

    decoder_queries + supplement_queries is the per-image prediction cap
    handed to evaluation.
    """

    decoder_queries: int = 300
    supplement_queries: int = 700

    def __post_init__(self):
        if self.decoder_queries < 1:
            raise ValueError(f"decoder_queries must be >= 1, got {self.decoder_queries}")
        if self.supplement_queries < 0:
            raise ValueError(f"supplement_queries must be >= 0, got {self.supplement_queries}")

    @property
    def total(self) -> int:
        return self.decoder_queries + self.supplement_queries


# ---------------------------------------------------------------------------
# Similarity head
# ---------------------------------------------------------------------------

def _normalized_rows(m: EmbeddingMatrix, what: str) -> np.ndarray:
    values = m.values.astype(np.float64, copy=False)
    norms = np.linalg.norm(values, axis=1)
    if (norms == 0.0).any():
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise ZeroNormRowError(f"{what} row {bad} has zero norm")
    return values / norms[:, None]


def similarity_logits(
    visual: EmbeddingMatrix,
    text: EmbeddingMatrix,
    params: AlignmentHeadParams = AlignmentHeadParams(),
) -> np.ndarray:
    """Calibrated cosine logits, entry (i, j) = alpha * cos(v_i, t_j) + beta.

    Invariant to positive rescaling of any row; values lie in
    [beta - alpha, beta + alpha].
    """
    if visual.dim != text.dim:
        raise DimensionMismatchError(
            f"embedding dims differ: visual {visual.dim} vs text {text.dim}"
        )
    cos = _normalized_rows(visual, "visual") @ _normalized_rows(text, "text").T
    np.clip(cos, -1.0, 1.0, out=cos)
    return params.alpha * cos + params.beta


def similarity_prob(logits: ArrayLike) -> ArrayLike:
    """Elementwise logistic map, numerically stable for extreme logits."""
    x = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(logits) or getattr(logits, "ndim", 1) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mal_loss(
    p: ArrayLike,
    q: ArrayLike,
    y: int,
    w: LossWeights = LossWeights(),
) -> Tuple[ArrayLike, ArrayLike]:
    """IoU-modulated binary classification loss and its derivative in p.

    Positive branch (y=1) softens the target by q**gamma:
        L = -(q^g * log(p) + (1 - q^g) * log(1 - p))
    so the unique minimizer over p is q**gamma. Negative branch (y=0):
        L = -lambda_neg * p^g * log(1 - p).
    p is clamped to [eps, 1-eps] before logs; the derivative is evaluated
    at the clamped value. Accepts scalars or arrays (broadcast).
    """
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y!r}")
    scalar = np.isscalar(p) and np.isscalar(q)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    q = np.asarray(q, dtype=np.float64)
    if (q < 0).any() or (q > 1).any():
        raise ValueError("q must lie in [0, 1]")
    g = w.gamma
    if y == 1:
        t = q ** g
        loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
        grad = -t / p + (1.0 - t) / (1.0 - p)
    else:
        lam = w.lambda_neg
        loss = -lam * p ** g * np.log1p(-p)
        grad = lam * (p ** g / (1.0 - p) - g * p ** (g - 1.0) * np.log1p(-p))
    if scalar:
        return float(loss), float(grad)
    return loss, grad


def composite_loss(
    pred_box: Box2D,
    gt_box: Box2D,
    p: float,
    q: Optional[float],
    y: int,
    w: LossWeights = LossWeights(),
    image_w: float = 1.0,
    image_h: float = 1.0,
) -> float:
    """Weighted sum of classification, L1 and giou terms.

    q defaults to iou(pred_box, gt_box) when not given. The L1 term is the
    mean absolute difference of center-form coordinates divided by the
    image size (pass pre-normalized boxes with the default 1x1 size).
    Negatives (y=0) incur the classification term only.
    """
    if q is None:
        q = iou(pred_box, gt_box)
    cls, _ = mal_loss(p, q, y, w)
    total = w.lambda_cls * cls
    if y == 0:
        return float(total)
    pc = box_to_cxcywh(pred_box, image_w, image_h)
    gc = box_to_cxcywh(gt_box, image_w, image_h)
    l1 = sum(abs(a - b) for a, b in zip(pc, gc)) / 4.0
    total += w.lambda_l1 * l1
    total += w.lambda_giou * (1.0 - giou(pred_box, gt_box))
    return float(total)


def gradient_sweep(
    gamma_values: Sequence[float] = (1.0, 2.0),
    lambda_neg: float = 0.5,
    step: float = 1e-6,
    corrupt: float = 0.0,
) -> float:
    """Max relative error between the analytic derivative of mal_loss and a
    central finite difference, over both branches of a (p, q, gamma) grid.

    `corrupt` perturbs the analytic value (negative-control hook).
    """
    ps = np.round(np.arange(0.05, 0.9501, 0.05), 10)
    qs = (0.0, 0.25, 0.5, 0.75, 1.0)
    worst = 0.0
    for g in gamma_values:
        w = LossWeights(gamma=g, lambda_neg=lambda_neg)
        for y in (1, 0):
            for q in qs:
                for p in ps:
                    _, analytic = mal_loss(p, q, y, w)
                    analytic += corrupt
                    lo, _ = mal_loss(p - step, q, y, w)
                    hi, _ = mal_loss(p + step, q, y, w)
                    fd = (hi - lo) / (2.0 * step)
                    rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1.0)
                    worst = max(worst, rel)
    return worst


def minimizer_sweep(
    gamma_values: Sequence[float] = (1.0, 2.0),
    q_values: Sequence[float] = tuple(round(0.1 * i, 1) for i in range(1, 10)),
    grid_points: int = 100001,
) -> float:
    """Max |argmin_p positive-branch loss - q**gamma| by dense grid search.

    The positive branch is minimized at the softened target q**gamma, which
    is the mechanism that turns poorly localized matches into weak or
    misdirected similarity supervision.
    """
    p_grid = np.linspace(PROB_EPS, 1.0 - PROB_EPS, grid_points)
    worst = 0.0
    for g in gamma_values:
        w = LossWeights(gamma=g)
        for q in q_values:
            losses, _ = mal_loss(p_grid, q, 1, w)
            p_star = float(p_grid[int(np.argmin(losses))])
            worst = max(worst, abs(p_star - q ** g))
    return worst


# ---------------------------------------------------------------------------
# Query selection and supplement
# ---------------------------------------------------------------------------

def text_aware_select(logits: np.ndarray, k: int) -> List[int]:
    """Indices of the k rows with the largest max-over-text logit,
    descending score, ties broken by ascending row index."""
    logits = np.asarray(logits)
    n = logits.shape[0]
    if k > n:
        raise KTooLargeError(f"k={k} exceeds {n} rows")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    scores = logits.max(axis=1)
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def supplement_predictions(
    decoder_preds: Sequence[Detection],
    encoder_logits: np.ndarray,
    encoder_boxes: Sequence[Box2D],
    budget: QueryBudget,
    exclude: Sequence[int],
    image_id: int = 0,
    per_class: bool = False,
) -> List[Detection]:
    """Append encoder candidates after the decoder predictions.

    Rows not in `exclude` are ranked by max-over-text probability and the
    top budget.supplement_queries rows each contribute one detection for
    their argmax class. With per_class=True every selected row instead
    expands to one detection per text column. Decoder predictions are
    never reordered or mutated.
    """
    logits = np.asarray(encoder_logits, dtype=np.float64)
    n = logits.shape[0]
    if len(encoder_boxes) != n:
        raise DimensionMismatchError(
            f"{len(encoder_boxes)} boxes for {n} encoder rows"
        )
    excluded: Set[int] = set(int(i) for i in exclude)
    candidates = [i for i in range(n) if i not in excluded]
    if budget.supplement_queries > len(candidates):
        raise BudgetExceedsRowsError(
            f"supplement budget {budget.supplement_queries} exceeds "
            f"{len(candidates)} eligible encoder rows"
        )
    out = list(decoder_preds)
    if budget.supplement_queries == 0:
        return out
    probs = similarity_prob(logits)
    cand = np.asarray(candidates)
    row_scores = probs[cand].max(axis=1)
    order = np.argsort(-row_scores, kind="stable")
    chosen = cand[order[: budget.supplement_queries]]
    for row in chosen:
        row = int(row)
        if per_class:
            cols = range(logits.shape[1])
        else:
            cols = (int(np.argmax(probs[row])),)
        for c in cols:
            out.append(
                Detection(
                    image_id=image_id,
                    category_id=int(c),
                    box=encoder_boxes[row],
                    score=float(probs[row, c]),
                    origin="supplement",
                )
            )
    return out
