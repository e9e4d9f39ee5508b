"""Utility and group-fairness metrics plus the attacker/auditor classifiers.

Metrics follow the standard binary definitions: accuracy, demographic-parity
gap ("discrimination"), error gap, and equalized-odds gap.  An empty group or
(group, label) cell raises instead of silently reporting 0, since a silent 0
would fake perfect parity.

Auditors: an L2-regularized logistic regression fit by full-batch gradient
descent, a bootstrap random forest of CART/Gini trees, and a majority-class
prior baseline.  Predictors are deterministic after fitting; the forest seeds
one RNG per tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UndefinedMetricError

PREDICTOR_KINDS = ("logistic-regression", "random-forest", "majority-prior")

RF_TREES = 50
RF_MAX_DEPTH = 16
LR_L2_WEIGHT = 1.0
LR_MAX_ITER = 1000
LR_TOL = 1e-6


@dataclass
class AuditSet:
    """Rows to audit: features (original data or representations) plus labels."""

    features: np.ndarray
    s: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=int)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.s.shape != (n,):
            raise ShapeError(f"s has shape {self.s.shape}, expected ({n},)")
        if not np.isin(self.s, (0, 1)).all():
            raise ShapeError("sensitive labels must be binary 0/1")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=int)
            if self.t.shape != (n,):
                raise ShapeError(f"t has shape {self.t.shape}, expected ({n},)")
            if not np.isin(self.t, (0, 1)).all():
                raise ShapeError("task labels must be binary 0/1")


def _check_labels(*arrays: Sequence) -> list[np.ndarray]:
    out = [np.asarray(a, dtype=int) for a in arrays]
    n = out[0].shape[0]
    for a in out:
        if a.ndim != 1 or a.shape[0] != n:
            raise ShapeError(f"label arrays must share one length, got {[x.shape for x in out]}")
    if n < 1:
        raise ShapeError("metrics need at least one row")
    return out


def accuracy(pred, truth) -> float:
    """Fraction of correct classifications."""
    pred, truth = _check_labels(pred, truth)
    return float(np.mean(pred == truth))


def discrimination(pred, s) -> float:
    """Demographic-parity gap |P(pred=1 | s=0) - P(pred=1 | s=1)|."""
    pred, s = _check_labels(pred, s)
    gap = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise UndefinedMetricError(f"discrimination undefined: group S={group} is empty")
        gap.append(float(np.mean(pred[mask] == 1)))
    return abs(gap[0] - gap[1])


def error_gap(pred, s, truth) -> float:
    """Accuracy-parity deviation |P(pred!=t | s=0) - P(pred!=t | s=1)|."""
    pred, s, truth = _check_labels(pred, s, truth)
    rates = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise UndefinedMetricError(f"error gap undefined: group S={group} is empty")
        rates.append(float(np.mean(pred[mask] != truth[mask])))
    return abs(rates[0] - rates[1])


def equalized_odds_gap(pred, s, truth) -> float:
    """Max over true labels of the group gap in positive-prediction rate."""
    pred, s, truth = _check_labels(pred, s, truth)
    worst = 0.0
    for tau in (0, 1):
        rates = []
        for group in (0, 1):
            mask = (s == group) & (truth == tau)
            if not mask.any():
                raise UndefinedMetricError(
                    f"equalized odds gap undefined: cell (S={group}, T={tau}) is empty"
                )
            rates.append(float(np.mean(pred[mask] == 1)))
        worst = max(worst, abs(rates[0] - rates[1]))
    return worst


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


class LogisticRegressionPredictor:
    """L2-regularized logistic regression, full-batch gradient descent.

    Objective: mean log-loss + ||w||^2 / (2n); bias unregularized.  Step size
    adapts by halving on any loss increase.  Stops on a loss change below
    LR_TOL or after LR_MAX_ITER iterations.
    """

    kind = "logistic-regression"

    def __init__(self, x: np.ndarray, y: np.ndarray):
        n, d = x.shape
        sign = 2.0 * y - 1.0
        w = np.zeros(d)
        b = 0.0

        def loss_and_grad(w, b):
            z = x @ w + b
            m = sign * z
            # log(1 + exp(-m)) evaluated stably
            loss = float(np.mean(np.logaddexp(0.0, -m))) + LR_L2_WEIGHT * float(w @ w) / (2 * n)
            p = 1.0 / (1.0 + np.exp(np.clip(m, -500, 500)))
            gz = -sign * p / n
            return loss, x.T @ gz + LR_L2_WEIGHT * w / n, float(gz.sum())

        lr = 1.0
        loss, gw, gb = loss_and_grad(w, b)
        for _ in range(LR_MAX_ITER):
            for _half in range(40):
                w_new = w - lr * gw
                b_new = b - lr * gb
                new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new)
                if new_loss <= loss:
                    break
                lr *= 0.5
            else:
                break
            improved = loss - new_loss
            w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
            lr *= 1.1
            if improved < LR_TOL:
                break
        self.w = w
        self.b = b

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) @ self.w + self.b > 0.0).astype(int)


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "label")

    def __init__(self, label=None, feature=None, threshold=None, left=None, right=None):
        self.label = label
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right


def _majority(counts: np.ndarray) -> int:
    # ties break toward the lower label
    return int(np.argmax(counts))


def _best_split(x, y, n_classes, feat_ids):
    """Minimal weighted Gini split over the given features; None if no split."""
    n = x.shape[0]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    total = onehot.sum(axis=0)
    best = (np.inf, -1, 0.0)
    for f in feat_ids:
        vals = x[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cum = np.cumsum(onehot[order], axis=0)
        boundary = np.flatnonzero(sv[1:] != sv[:-1])
        if boundary.size == 0:
            continue
        n_l = (boundary + 1).astype(float)
        n_r = n - n_l
        c_l = cum[boundary]
        c_r = total - c_l
        cost = (n_l - (c_l**2).sum(axis=1) / n_l + n_r - (c_r**2).sum(axis=1) / n_r) / n
        k = int(np.argmin(cost))
        if cost[k] < best[0] - 1e-15:
            thr = 0.5 * (sv[boundary[k]] + sv[boundary[k] + 1])
            best = (float(cost[k]), int(f), float(thr))
    return None if best[1] < 0 else best


def _grow_tree(x, y, n_classes, depth, max_depth, n_feats, rng):
    counts = np.bincount(y, minlength=n_classes)
    if depth >= max_depth or x.shape[0] < 2 or counts.max() == x.shape[0]:
        return _TreeNode(label=_majority(counts))
    feat_ids = rng.choice(x.shape[1], size=n_feats, replace=False)
    split = _best_split(x, y, n_classes, np.sort(feat_ids))
    if split is None:
        return _TreeNode(label=_majority(counts))
    _, f, thr = split
    mask = x[:, f] < thr
    left = _grow_tree(x[mask], y[mask], n_classes, depth + 1, max_depth, n_feats, rng)
    right = _grow_tree(x[~mask], y[~mask], n_classes, depth + 1, max_depth, n_feats, rng)
    return _TreeNode(feature=f, threshold=thr, left=left, right=right)


def _tree_predict(node: _TreeNode, x: np.ndarray, out: np.ndarray, idx: np.ndarray):
    if node.label is not None:
        out[idx] = node.label
        return
    mask = x[idx, node.feature] < node.threshold
    _tree_predict(node.left, x, out, idx[mask])
    _tree_predict(node.right, x, out, idx[~mask])


class RandomForestPredictor:
    """Bootstrap forest of CART/Gini trees with per-split feature subsampling."""

    kind = "random-forest"

    def __init__(self, x: np.ndarray, y: np.ndarray, seed: int,
                 n_trees: int = RF_TREES, max_depth: int = RF_MAX_DEPTH):
        n, d = x.shape
        self.n_classes = int(y.max()) + 1
        n_feats = max(1, int(round(np.sqrt(d))))
        seeds = np.random.SeedSequence(seed).spawn(n_trees)
        self.trees = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            boot = rng.integers(0, n, n)
            self.trees.append(
                _grow_tree(x[boot], y[boot], self.n_classes, 0, max_depth, n_feats, rng)
            )

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        votes = np.zeros((x.shape[0], self.n_classes))
        out = np.empty(x.shape[0], dtype=int)
        for tree in self.trees:
            _tree_predict(tree, x, out, np.arange(x.shape[0]))
            votes[np.arange(x.shape[0]), out] += 1.0
        return votes.argmax(axis=1)


class MajorityPriorPredictor:
    """Predicts the training majority class regardless of features."""

    kind = "majority-prior"

    def __init__(self, y: np.ndarray):
        self.label = _majority(np.bincount(y))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(x).shape[0], self.label, dtype=int)


def fit(kind: str, features: np.ndarray, labels: np.ndarray, seed: int = 2020):
    """Fit one predictor of the given kind; trainable kinds need both classes."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"fit: features {x.shape} and labels {y.shape} do not align")
    if x.shape[0] < 2:
        raise ShapeError("fit needs at least 2 rows")
    if kind == "majority-prior":
        return MajorityPriorPredictor(y)
    if len(np.unique(y)) < 2:
        raise ConfigError(f"{kind} needs both classes present in the labels")
    if kind == "logistic-regression":
        return LogisticRegressionPredictor(x, y)
    if kind == "random-forest":
        return RandomForestPredictor(x, y, seed)
    raise ConfigError(f"unknown predictor kind '{kind}', expected one of {PREDICTOR_KINDS}")


# ---------------------------------------------------------------------------
# audit rows
# ---------------------------------------------------------------------------


@dataclass
class AuditMetrics:
    """One auditor's row: task utility plus the group-fairness gaps."""

    kind: str
    accuracy_t: float | None
    accuracy_s: float
    discrimination: float | None
    error_gap: float | None
    eo_gap: float | None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "accuracy_t": self.accuracy_t,
            "accuracy_s": self.accuracy_s,
            "discrimination": self.discrimination,
            "error_gap": self.error_gap,
            "eo_gap": self.eo_gap,
        }


def audit_row(train: AuditSet, test: AuditSet, seed: int = 2020) -> dict[str, AuditMetrics]:
    """Fit every predictor kind on the train split, measure on the test split.

    Task metrics come from a predictor of T, the sensitive-recovery accuracy
    from a predictor of S fit on the same features.  Privacy-only audits
    (no task labels) report just the S-recovery accuracy.
    """
    results: dict[str, AuditMetrics] = {}
    for kind in PREDICTOR_KINDS:
        pred_s = fit(kind, train.features, train.s, seed=seed).predict(test.features)
        acc_s = accuracy(pred_s, test.s)
        if train.t is None or test.t is None:
            results[kind] = AuditMetrics(kind, None, acc_s, None, None, None)
            continue
        pred_t = fit(kind, train.features, train.t, seed=seed).predict(test.features)
        results[kind] = AuditMetrics(
            kind,
            accuracy_t=accuracy(pred_t, test.t),
            accuracy_s=acc_s,
            discrimination=discrimination(pred_t, test.s),
            error_gap=error_gap(pred_t, test.s, test.t),
            eo_gap=equalized_odds_gap(pred_t, test.s, test.t),
        )
    return results
