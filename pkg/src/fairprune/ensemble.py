"""Tree ensembles combined by a weighted majority vote.

Base learners are depth-limited CART trees grown with weighted Gini
impurity on the full feature matrix (general features followed by the
sensitive attributes). Bagging, AdaBoost.M1 and SAMME build the ensembles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, PerturbedView
from .errors import (
    AllZeroWeights,
    DataError,
    FingerprintMismatch,
    InvalidInput,
    LengthMismatch,
    NoUsefulWeakLearner,
)
from .metrics import PredictionProfile

FORMAT = "fairprune.ensemble"
FORMAT_VERSION = 1
ALPHA_CAP = math.log(1e12)
MAX_RETRIES = 10
# relative slack under which two class scores count as a tie
TIE_RTOL = 1e-12


def _stream(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


class DecisionTree:
    """Binary decision tree stored as flat node arrays.

    ``feature[i] == -1`` marks a leaf; rows with ``x[feature] <= threshold``
    go left.
    """

    def __init__(self, feature, threshold, left, right, value, n_classes, meta=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.int64)
        self.n_classes = int(n_classes)
        self.training_meta = dict(meta or {})

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def predict(self, X) -> np.ndarray | int:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return int(self.predict(X.reshape(1, -1))[0])
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r, nd, f = rows[inner], node[inner], feat[inner]
            go_left = X[r, f] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": int(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "majority": int(self.value[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, doc: dict, n_classes: int, meta=None) -> "DecisionTree":
        feature, threshold, left, right, value = [], [], [], [], []

        def add(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            if "leaf" in node:
                value.append(int(node["leaf"]))
                return i
            value.append(int(node.get("majority", 0)))
            feature[i] = int(node["feature"])
            threshold[i] = float(node["threshold"])
            left[i] = add(node["left"])
            right[i] = add(node["right"])
            return i

        add(doc)
        return cls(feature, threshold, left, right, value, n_classes, meta)


def _weighted_majority(y, w, n_classes):
    counts = np.bincount(y, weights=w, minlength=n_classes)
    return int(np.argmax(counts))


def _best_split(X, y, w, n_classes, feat_order):
    W = w.sum()
    totals = np.bincount(y, weights=w, minlength=n_classes)
    parent = W - (totals**2).sum() / W
    best_imp = parent - 1e-12 * W
    best = None
    for j in feat_order:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        C = np.zeros((xs.shape[0], n_classes))
        C[np.arange(xs.shape[0]), y[order]] = w[order]
        cl = np.cumsum(C, axis=0)[:-1]
        wl = cl.sum(axis=1)
        cr = totals - cl
        wr = W - wl
        with np.errstate(divide="ignore", invalid="ignore"):
            imp = wl - (cl**2).sum(axis=1) / wl + wr - (cr**2).sum(axis=1) / wr
        imp[~valid | (wl <= 0) | (wr <= 0)] = np.inf
        i = int(np.argmin(imp))
        if imp[i] < best_imp:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2
            if not lo <= thr < hi:
                thr = lo
            best_imp, best = imp[i], (int(j), float(thr))
    return best


def train_tree(d: Dataset | tuple, row_weights=None, max_depth: int = 4, seed: int = 0) -> DecisionTree:
    """Grow a CART tree by weighted Gini impurity.

    ``d`` is a :class:`Dataset` or a ``(X, y, n_classes)`` triple. Rows with
    zero weight are ignored; the seed only fixes the order in which features
    are scanned, which decides between equally good splits.
    """
    if isinstance(d, Dataset):
        X, y, n_classes = d.features(), d.labels, d.n_classes
    else:
        X, y, n_classes = d
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    if max_depth < 0:
        raise InvalidInput("max_depth must be >= 0")
    w = np.ones(y.shape[0]) if row_weights is None else np.asarray(row_weights, dtype=np.float64)
    if w.shape != y.shape:
        raise LengthMismatch("one weight per row required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("row weights must be finite and non-negative")
    keep = w > 0
    if not keep.any():
        raise AllZeroWeights("all row weights are zero")
    X, y, w = X[keep], y[keep], w[keep]
    feat_order = np.random.default_rng(seed).permutation(X.shape[1])

    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_weighted_majority(y[idx], w[idx], n_classes))
        if depth >= max_depth or idx.shape[0] < 2 or np.all(y[idx] == y[idx[0]]):
            return i
        split = _best_split(X[idx], y[idx], w[idx], n_classes, feat_order)
        if split is None:
            return i
        j, thr = split
        mask = X[idx, j] <= thr
        feature[i], threshold[i] = j, thr
        left[i] = grow(idx[mask], depth + 1)
        right[i] = grow(idx[~mask], depth + 1)
        return i

    grow(np.arange(y.shape[0]), 0)
    meta = {"kind": "cart", "max_depth": int(max_depth), "seed": int(seed)}
    return DecisionTree(feature, threshold, left, right, value, n_classes, meta)


def vote_scores(member_preds, weights, n_classes: int) -> np.ndarray:
    """Per-class vote mass, shape ``(n_classes, n)`` for an ``m x n`` prediction matrix."""
    P = np.asarray(member_preds, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if P.shape[0] != w.shape[0]:
        raise LengthMismatch(f"{P.shape[0]} member predictions but {w.shape[0]} weights")
    scores = np.zeros((n_classes, P.shape[1]))
    for c in range(n_classes):
        scores[c] = w @ (P == c)
    return scores


def vote_matrix(member_preds, weights, n_classes: int) -> np.ndarray:
    """Weighted majority vote per column; near-ties go to the lowest class index."""
    scores = vote_scores(member_preds, weights, n_classes)
    tol = TIE_RTOL * float(np.abs(weights).sum())
    top = scores.max(axis=0)
    return np.argmax(scores >= top - tol, axis=0).astype(np.int64)


def weighted_vote(member_preds, weights, n_classes: int | None = None) -> int:
    preds = np.asarray(member_preds, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if preds.ndim != 1 or preds.shape != weights.shape:
        raise LengthMismatch("one prediction per weight required")
    if n_classes is None:
        n_classes = int(preds.max()) + 1
    return int(vote_matrix(preds.reshape(-1, 1), weights, n_classes)[0])


def normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise InvalidInput("weights must be non-negative with positive sum")
    return w / w.sum()


@dataclass(eq=False)
class WeightedEnsemble:
    members: list
    weights: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.members) < 1:
            raise InvalidInput("ensemble needs at least one member")
        if self.weights.shape != (len(self.members),):
            raise LengthMismatch("one weight per member required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidInput("weights must be non-negative and sum to 1")

    @property
    def m(self) -> int:
        return len(self.members)

    def member_predictions(self, X) -> np.ndarray:
        return np.vstack([h.predict(X) for h in self.members])

    def predict(self, X) -> np.ndarray:
        return vote_matrix(self.member_predictions(X), self.weights, self.n_classes)

    def to_dict(self) -> dict:
        from . import __version__

        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "n_classes": self.n_classes,
            "meta": self.meta,
            "weights": [float(v) for v in self.weights],
            "members": [{"training_meta": h.training_meta, "tree": h.to_dict()} for h in self.members],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightedEnsemble":
        if doc.get("format") != FORMAT or doc.get("format_version") != FORMAT_VERSION:
            raise DataError("not a fairprune ensemble document (format/version mismatch)")
        n_classes = int(doc["n_classes"])
        members = [DecisionTree.from_dict(m["tree"], n_classes, m.get("training_meta")) for m in doc["members"]]
        return cls(members, np.array(doc["weights"], dtype=np.float64), n_classes, dict(doc.get("meta", {})))


def save_ensemble(e: WeightedEnsemble, path) -> None:
    Path(path).write_text(json.dumps(e.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_ensemble(path) -> WeightedEnsemble:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
    return WeightedEnsemble.from_dict(doc)


def train_bagging(d: Dataset, m: int = 11, max_depth: int = 4, seed: int = 0) -> WeightedEnsemble:
    """Bootstrap-aggregated trees with uniform weights.

    Member ``j`` draws its bootstrap sample from its own seed stream
    ``(seed, j)``, so a member does not depend on ``m``.
    """
    if m < 1:
        raise InvalidInput("m must be >= 1")
    X = d.features()
    members = []
    for j in range(m):
        rng = _stream(seed, j)
        counts = np.bincount(rng.integers(0, d.n, size=d.n), minlength=d.n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        tree = train_tree((X, d.labels, d.n_classes), counts.astype(np.float64), max_depth, tree_seed)
        tree.training_meta.update(learner="bagging", member=j)
        members.append(tree)
    meta = {"trainer": "bagging", "m": m, "max_depth": max_depth, "seed": seed}
    return WeightedEnsemble(members, np.full(m, 1.0 / m), d.n_classes, meta)


def boost_alpha(eps: float, n_classes: int = 2) -> float:
    """Member weight ``ln((1-eps)/eps) + ln(n_classes-1)``; capped when ``eps == 0``."""
    if eps <= 0.0:
        return ALPHA_CAP
    return math.log((1.0 - eps) / eps) + math.log(n_classes - 1)


def train_adaboost(d: Dataset, m: int = 11, max_depth: int = 4, variant: str = "SAMME", seed: int = 0) -> WeightedEnsemble:
    """AdaBoost.M1 or SAMME with trees fit on reweighted rows.

    A round whose weighted error reaches ``1 - 1/n_classes`` is retried on a
    weighted bootstrap resample drawn from a fresh seed stream, at most
    ``MAX_RETRIES`` times. A perfect round ends training early.
    """
    variant = variant.upper().replace("ADABOOST.", "").replace("ADABOOST", "")
    if variant not in ("M1", "SAMME"):
        raise InvalidInput(f"unknown boosting variant {variant!r}")
    if m < 1:
        raise InvalidInput("m must be >= 1")
    K = d.n_classes
    if variant == "M1" and K > 2:
        raise InvalidInput("AdaBoost.M1 is restricted to binary tasks here; use SAMME")
    X, y = d.features(), d.labels
    D = np.full(d.n, 1.0 / d.n)
    members, alphas = [], []
    for t in range(m):
        tree, eps = None, None
        for attempt in range(MAX_RETRIES + 1):
            rng = _stream(seed, t, attempt)
            tree_seed = int(rng.integers(0, 2**31 - 1))
            if attempt == 0:
                fit_w = D
            else:
                draw = rng.choice(d.n, size=d.n, replace=True, p=D)
                fit_w = np.bincount(draw, minlength=d.n).astype(np.float64)
            cand = train_tree((X, y, K), fit_w, max_depth, tree_seed)
            miss = cand.predict(X) != y
            eps_c = float(D[miss].sum() / D.sum())
            if eps_c < 1.0 - 1.0 / K:
                tree, eps = cand, eps_c
                break
        if tree is None:
            raise NoUsefulWeakLearner(f"round {t}: no weak learner better than chance after {MAX_RETRIES} retries")
        alpha = boost_alpha(eps, K) if variant == "SAMME" else boost_alpha(eps, 2)
        tree.training_meta.update(learner=f"adaboost-{variant.lower()}", round=t, error=eps, alpha=alpha)
        members.append(tree)
        alphas.append(alpha)
        if eps == 0.0:
            break
        D = D * np.exp(alpha * miss)
        D = D / D.sum()
    alphas = np.array(alphas)
    keep = alphas > 0
    if not keep.any():
        raise NoUsefulWeakLearner("no member received positive weight")
    members = [h for h, k in zip(members, keep) if k]
    meta = {"trainer": f"adaboost-{variant.lower()}", "m": m, "max_depth": max_depth, "seed": seed}
    return WeightedEnsemble(members, normalize(alphas[keep]), K, meta)


TRAINERS = ("bagging", "adaboost-m1", "samme")


def train_ensemble(d: Dataset, trainer: str = "bagging", m: int = 11, max_depth: int = 4, seed: int = 0) -> WeightedEnsemble:
    if trainer == "bagging":
        return train_bagging(d, m, max_depth, seed)
    if trainer == "adaboost-m1":
        return train_adaboost(d, m, max_depth, "M1", seed)
    if trainer == "samme":
        return train_adaboost(d, m, max_depth, "SAMME", seed)
    raise InvalidInput(f"unknown trainer {trainer!r}; expected one of {TRAINERS}")


@dataclass(eq=False)
class EnsembleProfile:
    """Cached member predictions on original and perturbed rows, plus the votes."""

    members: list
    weights: np.ndarray
    n_classes: int
    vote_orig: np.ndarray = None
    vote_pert: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.members) != self.weights.shape[0]:
            raise LengthMismatch("one weight per member profile required")
        self.orig = np.vstack([p.preds_orig for p in self.members])
        self.pert = np.vstack([p.preds_pert for p in self.members])
        if self.vote_orig is None:
            self.vote_orig = vote_matrix(self.orig, self.weights, self.n_classes)
            self.vote_pert = vote_matrix(self.pert, self.weights, self.n_classes)

    @classmethod
    def from_matrices(cls, orig, pert, weights=None, n_classes=None) -> "EnsembleProfile":
        orig = np.asarray(orig, dtype=np.int64)
        pert = np.asarray(pert, dtype=np.int64)
        if orig.shape != pert.shape:
            raise LengthMismatch("original and perturbed prediction matrices differ in shape")
        m = orig.shape[0]
        if weights is None:
            weights = np.full(m, 1.0 / m)
        if n_classes is None:
            n_classes = max(2, int(max(orig.max(), pert.max())) + 1)
        members = [PredictionProfile(orig[j], pert[j], j) for j in range(m)]
        return cls(members, weights, n_classes)

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def n(self) -> int:
        return int(self.orig.shape[1])

    @property
    def flips(self) -> np.ndarray:
        return self.orig != self.pert

    def vote_profile(self) -> PredictionProfile:
        return PredictionProfile(self.vote_orig, self.vote_pert, "vote")

    def restrict(self, indices, weights=None) -> "EnsembleProfile":
        """Sub-ensemble over ``indices``; uniform weights unless given."""
        idx = [int(i) for i in indices]
        if not idx:
            raise InvalidInput("empty member selection")
        w = np.full(len(idx), 1.0 / len(idx)) if weights is None else weights
        return EnsembleProfile([self.members[i] for i in idx], w, self.n_classes)


def build_profile(e: WeightedEnsemble, d: Dataset, v: PerturbedView) -> EnsembleProfile:
    if v.source_fingerprint != d.fingerprint():
        raise FingerprintMismatch("perturbed view was not derived from this dataset")
    X_orig = d.features()
    X_pert = d.features(v.perturbed_sensitive)
    members = [
        PredictionProfile(h.predict(X_orig), h.predict(X_pert), j) for j, h in enumerate(e.members)
    ]
    return EnsembleProfile(members, e.weights.copy(), e.n_classes)


__all__: Sequence[str] = [
    "DecisionTree",
    "EnsembleProfile",
    "WeightedEnsemble",
    "boost_alpha",
    "build_profile",
    "load_ensemble",
    "save_ensemble",
    "train_adaboost",
    "train_bagging",
    "train_ensemble",
    "train_tree",
    "vote_matrix",
    "weighted_vote",
]
