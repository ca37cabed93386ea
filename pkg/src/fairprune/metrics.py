"""Fairness and accuracy measures.

Discriminative risk (DR) counts the rows on which a classifier changes its
prediction when only the sensitive attributes are perturbed. The tandem
variant counts rows where *two* classifiers both change. Group measures
(DP, EO, PQP) are the usual binary-task gaps between the privileged group
(``group == 1``) and everyone else.

Undefined quantities (empty conditioning cells, zero denominators) are
reported as ``None``; they are never coerced to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .errors import ConstantVector, EmptyProfile, InvalidInput, LengthMismatch, NonBinaryTask

MEASURES = ("DP", "EO", "PQP")


@dataclass(frozen=True, eq=False)
class PredictionProfile:
    """Predictions of one member on the original and the perturbed rows."""

    preds_orig: np.ndarray
    preds_pert: np.ndarray
    member_id: Hashable = 0

    def __post_init__(self):
        a = np.asarray(self.preds_orig, dtype=np.int64)
        b = np.asarray(self.preds_pert, dtype=np.int64)
        if a.shape != b.shape or a.ndim != 1:
            raise LengthMismatch(f"profile vectors differ in shape: {a.shape} vs {b.shape}")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "preds_orig", a)
        object.__setattr__(self, "preds_pert", b)

    @property
    def flips(self) -> np.ndarray:
        return self.preds_orig != self.preds_pert

    def __len__(self):
        return self.preds_orig.shape[0]


@dataclass(frozen=True)
class GroupFairnessResult:
    measure: str
    value: float | None
    group_sizes: tuple[int, int]

    @property
    def defined(self) -> bool:
        return self.value is not None


def fair_loss_instance(p_orig, p_pert) -> int:
    return int(p_orig != p_pert)


def empirical_dr(profile: PredictionProfile) -> float:
    if len(profile) == 0:
        raise EmptyProfile("profile has no rows")
    return float(np.mean(profile.flips))


def tandem_loss_instance(pf: tuple, pg: tuple) -> int:
    """1 iff both members flip; each argument is an ``(orig, pert)`` pair."""
    return int(pf[0] != pf[1] and pg[0] != pg[1])


def empirical_tandem(a: PredictionProfile, b: PredictionProfile) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"profiles have {len(a)} and {len(b)} rows")
    if len(a) == 0:
        raise EmptyProfile("profile has no rows")
    return float(np.mean(a.flips & b.flips))


def tandem_matrix(flips: np.ndarray) -> np.ndarray:
    """Pairwise tandem DR from an ``m x n`` boolean flip matrix.

    Computed from integer co-occurrence counts, so the result is exactly
    symmetric and its diagonal equals the per-member DR.
    """
    F = np.asarray(flips, dtype=np.int64)
    return (F @ F.T) / F.shape[1]


def _rate(mask_event, mask_cond):
    denom = int(mask_cond.sum())
    if denom == 0:
        return None
    return int((mask_event & mask_cond).sum()) / denom


def group_fairness(measure: str, preds, labels, group) -> GroupFairnessResult:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    group = np.asarray(group)
    if not (preds.shape == labels.shape == group.shape) or preds.ndim != 1:
        raise LengthMismatch("preds, labels and group must have equal length")
    if measure not in MEASURES:
        raise InvalidInput(f"unknown measure {measure!r}")
    if np.any((preds != 0) & (preds != 1)) or np.any((labels != 0) & (labels != 1)):
        raise NonBinaryTask("group fairness measures need binary predictions and labels")
    if np.any((group != 0) & (group != 1)):
        raise InvalidInput("group must be a 0/1 membership vector")

    g1, g0 = group == 1, group == 0
    pos_pred, pos_true = preds == 1, labels == 1
    if measure == "DP":
        r1, r0 = _rate(pos_pred, g1), _rate(pos_pred, g0)
        sizes = (int(g0.sum()), int(g1.sum()))
    elif measure == "EO":
        r1, r0 = _rate(pos_pred, g1 & pos_true), _rate(pos_pred, g0 & pos_true)
        sizes = (int((g0 & pos_true).sum()), int((g1 & pos_true).sum()))
    else:
        r1, r0 = _rate(pos_true, g1 & pos_pred), _rate(pos_true, g0 & pos_pred)
        sizes = (int((g0 & pos_pred).sum()), int((g1 & pos_pred).sum()))
    value = None if r1 is None or r0 is None else abs(r1 - r0)
    return GroupFairnessResult(measure, value, sizes)


def _ratio(num, den):
    return num / den if den else None


def classification_metrics(preds, labels) -> dict:
    """Accuracy for any task; precision/recall/f1/specificity with class 1 positive.

    Binary-only entries are ``None`` for multi-class inputs and whenever a
    denominator is zero.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise LengthMismatch("preds and labels must have equal length")
    n = preds.shape[0]
    out = {"accuracy": _ratio(int((preds == labels).sum()), n)}
    binary = bool(np.all(np.isin(preds, (0, 1))) and np.all(np.isin(labels, (0, 1))))
    if not binary:
        out.update(precision=None, recall=None, f1=None, specificity=None)
        return out
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    out["precision"] = _ratio(tp, tp + fp)
    out["recall"] = _ratio(tp, tp + fn)
    out["f1"] = _ratio(2 * tp, 2 * tp + fp + fn)
    out["specificity"] = _ratio(tn, tn + fp)
    return out


def error_rate(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise LengthMismatch("preds and labels must have equal length")
    return float(np.mean(preds != labels))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("pearson needs two vectors of equal length")
    if x.shape[0] < 2:
        raise LengthMismatch("pearson needs at least two points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantVector("pearson correlation of a constant vector is undefined")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))
