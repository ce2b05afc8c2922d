"""Discriminant-analysis baselines and classification metrics.

The two classifiers follow the scikit-learn estimator protocol, so they
drop into pipelines after :class:`~hybseq.features.Standardizer`::

    >>> from sklearn.pipeline import make_pipeline
    >>> from hybseq.features import FeatureSelector, Standardizer
    >>> clf = make_pipeline(FeatureSelector("Aln"), Standardizer(),
    ...                     LinearDiscriminant())   # doctest: +SKIP
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class SingularCovariance(np.linalg.LinAlgError):
    pass


class OneClassOnly(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def _order_classes(y):
    classes = unique_labels(y)
    if len(classes) != 2:
        raise OneClassOnly(f"need exactly two classes, got {list(classes)}")
    # the positive class goes last; "High" is positive when present
    if "High" in set(classes.tolist()):
        classes = np.array(sorted(classes.tolist(), key=lambda c: c == "High"), dtype=object)
    return classes


_RANK_TOL = 1e-10


def _inverse(cov, what):
    """Inverse and log-determinant of a symmetric matrix, refusing singular ones."""
    w, v = np.linalg.eigh(cov)
    if w.min() <= max(w.max(), 1.0) * _RANK_TOL:
        raise SingularCovariance(f"{what} is singular (smallest eigenvalue {w.min():.3e})")
    return (v / w) @ v.T, float(np.log(w).sum())


def _range_inverse(cov, what):
    """Pseudo-inverse over the eigen-directions with non-negligible variance.

    Exactly collinear features (a mass balance between two columns, say)
    leave null directions in which neither class varies; they carry no
    discriminant information and are dropped. A covariance with no
    usable direction at all is an error.
    """
    w, v = np.linalg.eigh(cov)
    keep = w > max(w.max(), 0.0) * _RANK_TOL
    if not keep.any() or w.max() <= 0:
        raise SingularCovariance(f"{what} has no non-degenerate direction")
    v = v[:, keep]
    return (v / w[keep]) @ v.T, int(keep.sum())


class _Discriminant(BaseEstimator, ClassifierMixin):
    """Shared plumbing: class bookkeeping, prediction and probabilities."""

    def _setup(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = _order_classes(y)
        self.n_features_in_ = X.shape[1]
        pos = y == self.classes_[1]
        self.priors_ = np.array([1 - pos.mean(), pos.mean()])
        self.means_ = np.stack([X[~pos].mean(axis=0), X[pos].mean(axis=0)])
        return X, pos

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def predict_proba(self, X):
        s = np.clip(self.decision_function(X), -700, 700)
        p = 1.0 / (1.0 + np.exp(-s))
        return np.column_stack([1 - p, p])

    def _check(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X


class LinearDiscriminant(_Discriminant):
    """Two-class LDA with a pooled within-class covariance.

    Parameters
    ----------
    shrinkage : float, optional
        Blend towards a scaled identity, ``(1 - a) S + a tr(S)/d I``.
        Zero gives plain LDA.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
        ``decision_function(x) = x @ coef_ + intercept_`` is the
        discriminant of the positive class minus that of the negative one.
    """

    def __init__(self, shrinkage=0.0):
        self.shrinkage = shrinkage

    def fit(self, X, y):
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in [0, 1]")
        X, pos = self._setup(X, y)
        d = X.shape[1]
        cov = np.zeros((d, d))
        # prior-weighted biased class covariances
        for k, rows in enumerate((~pos, pos)):
            dev = X[rows] - self.means_[k]
            cov += self.priors_[k] * (dev.T @ dev) / rows.sum()
        if self.shrinkage:
            cov = (1 - self.shrinkage) * cov + self.shrinkage * np.trace(cov) / d * np.eye(d)
        self.covariance_ = cov
        prec, self.rank_ = _range_inverse(cov, "pooled covariance")
        diff = self.means_[1] - self.means_[0]
        self.coef_ = prec @ diff
        self.intercept_ = float(
            -0.5 * (self.means_[1] @ prec @ self.means_[1] - self.means_[0] @ prec @ self.means_[0])
            + np.log(self.priors_[1] / self.priors_[0]))
        return self

    def decision_function(self, X):
        X = self._check(X)
        return X @ self.coef_ + self.intercept_


class QuadraticDiscriminant(_Discriminant):
    """Two-class QDA with a small ridge on each class covariance.

    Parameters
    ----------
    reg : float
        Added to every covariance diagonal before inversion.
    """

    def __init__(self, reg=1e-6):
        self.reg = reg

    def fit(self, X, y):
        X, pos = self._setup(X, y)
        d = X.shape[1]
        self.covariances_, self._prec, self._logdet = [], [], []
        for k, rows in enumerate((~pos, pos)):
            n_k = rows.sum()
            if n_k < 2:
                raise SingularCovariance(f"class {self.classes_[k]!r} has {n_k} sample(s)")
            dev = X[rows] - self.means_[k]
            cov = dev.T @ dev / (n_k - 1) + self.reg * np.eye(d)
            prec, logdet = _inverse(cov, f"covariance of class {self.classes_[k]!r}")
            self.covariances_.append(cov)
            self._prec.append(prec)
            self._logdet.append(logdet)
        return self

    def _loglik(self, X, k):
        dev = X - self.means_[k]
        maha = np.einsum("ij,jk,ik->i", dev, self._prec[k], dev)
        return -0.5 * (maha + self._logdet[k]) + np.log(self.priors_[k])

    def decision_function(self, X):
        X = self._check(X)
        return self._loglik(X, 1) - self._loglik(X, 0)


# ------------------------------------------------------------------ metrics

def confusion(y_true, y_pred):
    """``(tp, fp, tn, fn)`` for 0/1 (or boolean) vectors."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    return (int((t & p).sum()), int((~t & p).sum()),
            int((~t & ~p).sum()), int((t & ~p).sum()))


def mcc(tp, fp, tn, fn) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("counts must be non-negative")
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic (midranks)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape} vs {y.shape}")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _ratio(a, b):
    return a / b if b else 0.0


def prf1(tp, fp, tn, fn) -> dict:
    """Per-class precision, recall and F1 (``High`` is the positive class)."""
    out = {}
    for name, (t, f_p, f_n) in (("High", (tp, fp, fn)), ("Low", (tn, fn, fp))):
        p, r = _ratio(t, t + f_p), _ratio(t, t + f_n)
        out[name] = {"precision": p, "recall": r, "f1": _ratio(2 * p * r, p + r)}
    return out


@dataclass
class MetricsReport:
    name: str
    tp: int
    fp: int
    tn: int
    fn: int
    mcc: float
    auroc: float | None = None
    mse: float | None = None
    per_class: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, name, y_true, y_pred, scores=None, target=None, estimate=None):
        """Build a report from binary truth/prediction vectors.

        ``scores`` feed AUROC; ``target``/``estimate`` (real-valued yields)
        feed MSE for regressors.
        """
        tp, fp, tn, fn = confusion(y_true, y_pred)
        auc = None
        if scores is not None:
            try:
                auc = auroc(scores, y_true)
            except OneClassOnly:
                auc = None
        err = None
        if target is not None and estimate is not None:
            err = float(np.mean((np.asarray(target) - np.asarray(estimate)) ** 2))
        return cls(name, tp, fp, tn, fn, mcc(tp, fp, tn, fn), auc, err, prf1(tp, fp, tn, fn))

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    def items(self):
        out = [("model", self.name), ("n", self.n), ("tp", self.tp), ("fp", self.fp),
               ("tn", self.tn), ("fn", self.fn), ("mcc", self.mcc)]
        if self.auroc is not None:
            out.append(("auroc", self.auroc))
        if self.mse is not None:
            out += [("mse", self.mse), ("mse_x1e6", self.mse * 1e6)]
        for cls_name, vals in self.per_class.items():
            for k, v in vals.items():
                out.append((f"{k}_{cls_name.lower()}", v))
        return out

    def lines(self):
        """Machine-readable ``name=value`` lines."""
        return [f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in self.items()]

    def table(self):
        rows = [f"{self.name}  (n={self.n})",
                f"  MCC    {self.mcc:.4f}"]
        if self.auroc is not None:
            rows.append(f"  AUROC  {self.auroc:.4f}")
        if self.mse is not None:
            rows.append(f"  MSE    {self.mse:.6f}  (x1e6: {self.mse * 1e6:.3f})")
        rows.append("           precision  recall  F1")
        for cls_name, v in self.per_class.items():
            rows.append(f"  {cls_name:<6}   {v['precision']:.4f}    {v['recall']:.4f}  {v['f1']:.4f}")
        rows.append(f"  TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn}")
        return "\n".join(rows)


def permutation_test(correct_a, correct_b, iters: int = 5000, seed: int = 0,
                     chunk: int = 256) -> float:
    """Paired two-sided permutation test on the difference in accuracy.

    Under the null the two models are exchangeable on every sample, so the
    per-sample differences ``a_i - b_i`` get random signs. Returns the Monte
    Carlo p-value ``(1 + #{|perm mean| >= |observed mean|}) / (iters + 1)``.
    """
    a = np.asarray(correct_a, dtype=float)
    b = np.asarray(correct_b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    d = a - b
    observed = abs(d.mean()) if len(d) else 0.0
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < iters:
        m = min(chunk, iters - done)
        signs = rng.integers(0, 2, size=(m, len(d))) * 2 - 1
        perm = np.abs(signs @ d) / max(len(d), 1)
        # tolerance guards against rounding in the mean
        hits += int((perm >= observed - 1e-12).sum())
        done += m
    return (1 + hits) / (iters + 1)
