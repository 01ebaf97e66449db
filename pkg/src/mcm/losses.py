"""Training objectives and the per-label F1 metric."""

from __future__ import annotations

import logging

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .mixing import MaskPlan
from .tensor import Tensor, add, clamp, gather_rows, log, mul, scale, sigmoid, sub, sum_

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7  # clamp for log arguments in the bce loss


def recon_loss_parts(
    pred_rgb: Tensor,
    pred_depth: Tensor,
    target_rgb: Tensor,
    target_depth: Tensor,
    mask: MaskPlan,
) -> tuple[Tensor, Tensor]:
    """Per-modality mean squared error over masked patches only."""
    return (
        _masked_mse(pred_rgb, target_rgb, mask),
        _masked_mse(pred_depth, target_depth, mask),
    )


def recon_loss(
    pred_rgb: Tensor,
    pred_depth: Tensor,
    target_rgb: Tensor,
    target_depth: Tensor,
    mask: MaskPlan,
) -> Tensor:
    """Masked-patch MSE summed over the two modalities with equal weight."""
    rgb, depth = recon_loss_parts(pred_rgb, pred_depth, target_rgb, target_depth, mask)
    return add(rgb, depth)


def _masked_mse(pred: Tensor, target: Tensor, mask: MaskPlan) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.shape[0] != mask.length:
        raise DimensionError(f"{pred.shape[0]} patches vs mask plan of {mask.length}")
    m = mask.masked
    if len(m) == 0:
        logger.warning("reconstruction loss over zero masked patches is defined as 0")
        return Tensor(0.0)
    diff = sub(gather_rows(pred, m), Tensor(target.data[m]))
    return scale(sum_(mul(diff, diff)), 1.0 / (len(m) * pred.shape[1]))


def au_weights(y: np.ndarray, invert: bool = False) -> np.ndarray:
    """Positive-class weights from label occurrence frequencies.

    P_k is label k's share of all positive entries; the default weight is
    P_k / min_j P_j, so the rarest label gets weight 1 and frequent labels
    get more. With invert=True the ratio flips to max_j P_j / P_k (rare
    labels up-weighted, the most frequent gets 1).

    Labels with zero occurrences get P floored at 1 / (total + K), with a
    logged warning; an all-zero matrix is rejected.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise DimensionError(f"label matrix must be NxK, got {y.shape}")
    counts = y.sum(axis=0)
    total = counts.sum()
    if total == 0:
        raise ContractError("label matrix has no positive entries")
    p_occ = counts / total
    zero = counts == 0
    if zero.any():
        floor = 1.0 / (total + y.shape[1])
        logger.warning(
            "%d labels have no positive occurrences; flooring their frequency at %.3g",
            int(zero.sum()),
            floor,
        )
        p_occ = np.where(zero, floor, p_occ)
    if invert:
        return p_occ.max() / p_occ
    return p_occ / p_occ.min()


def weighted_bce(logits: Tensor, y: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean weighted binary cross-entropy over N samples and K labels.

    Probabilities are sigmoid(logits) clamped to [eps, 1-eps]; the
    positive term of label k is scaled by weights[k].
    """
    y = np.asarray(y, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be NxK, got {logits.shape}")
    if logits.shape != y.shape or weights.shape != (y.shape[1],):
        raise DimensionError(
            f"logits {logits.shape}, labels {y.shape}, weights {weights.shape} disagree"
        )
    if np.isnan(logits.data).any():
        raise NumericError("logits contain NaN")
    n = logits.shape[0]
    prob = clamp(sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
    pos = mul(Tensor(weights[None, :] * y), log(prob))
    neg = mul(Tensor(1.0 - y), log(sub(Tensor(np.ones_like(y)), prob)))
    return scale(sum_(add(pos, neg)), -1.0 / n)


def f1_per_label(
    prob: np.ndarray, y: np.ndarray, threshold: float = 0.5
) -> tuple[np.ndarray, float]:
    """Per-label F1 (2TP / (2TP+FP+FN), 0 when the denominator is 0) and macro mean.

    A sample counts as predicted positive when prob >= threshold.
    """
    prob = np.asarray(prob, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if prob.shape != y.shape or prob.ndim != 2:
        raise DimensionError(f"prob {prob.shape} vs labels {y.shape}")
    pred = prob >= threshold
    truth = y > 0.5
    tp = np.logical_and(pred, truth).sum(axis=0).astype(np.float64)
    fp = np.logical_and(pred, ~truth).sum(axis=0).astype(np.float64)
    fn = np.logical_and(~pred, truth).sum(axis=0).astype(np.float64)
    denom = 2 * tp + fp + fn
    scores = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return scores, float(scores.mean())


def f1_table_text(names: list[str], scores: np.ndarray, macro: float, modality: str) -> str:
    """Fixed-width score table: one header row, one row of F1 x 100."""
    cells = [f"{s * 100:.1f}" for s in scores] + [f"{macro * 100:.1f}"]
    heads = list(names) + ["Avg"]
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    modal_w = max(len("Modal"), len(modality))
    header = "  ".join(["Modal".ljust(modal_w)] + [h.rjust(w) for h, w in zip(heads, widths)])
    row = "  ".join([modality.ljust(modal_w)] + [c.rjust(w) for c, w in zip(cells, widths)])
    return header + "\n" + row + "\n"


def f1_table_csv(names: list[str], scores: np.ndarray, macro: float, modality: str) -> str:
    """CSV twin of f1_table_text: header `modal,<names...>,avg`, one data row."""
    header = ",".join(["modal"] + list(names) + ["avg"])
    row = ",".join([modality] + [f"{s * 100:.1f}" for s in scores] + [f"{macro * 100:.1f}"])
    return header + "\n" + row + "\n"
