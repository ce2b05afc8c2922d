"""The nine hand-crafted pair features and ablation masks.

Column order::

    f0      annealing alignment score of s1 against rc(s2)
    f1, f2  GC fraction of s1, s2
    f3, f4  single-strand structure score of s1, s2 (kcal/mol)
    f5, f6  free single strand of s1, s2 alone in a 1 uM tube (uM)
    f7, f8  homodimer of s1, s2 alone in a 1 uM tube (uM)

Per-sequence quantities are computed at the reference temperature.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .align import DEFAULT_PARAMS, annealing_scores
from .dataset import HIGH, LOW, ParseError, label
from .seq import DnaSeq, gc_content
from .thermo import (REFERENCE_TEMP, association_constants, default_params,
                     duplex_energies, single_structure_score, single_tube)

N_FEATURES = 9
FEATURE_NAMES = tuple(f"f{i}" for i in range(N_FEATURES))
GROUPS = {
    "Aln": (0,),
    "GC": (1, 2),
    "SC": (5, 6),
    "PC": (7, 8),
    "SMFE": (3, 4),
}
TUBE_CONC = 1e-6  # mol/L
MICRO = 1e6


class EmptyMask(ValueError):
    pass


class FeatureMask:
    """A subset of the feature groups ``Aln, GC, SC, PC, SMFE``."""

    def __init__(self, include):
        if isinstance(include, str):
            include = [g for g in include.replace("+", ",").split(",") if g.strip()]
        include = [g.strip() for g in include]
        if not include:
            raise EmptyMask("a feature mask needs at least one group")
        bad = [g for g in include if g not in GROUPS]
        if bad:
            raise ValueError(f"unknown feature groups {bad}; choose from {list(GROUPS)}")
        self.include = tuple(g for g in GROUPS if g in include)

    @classmethod
    def full(cls):
        return cls(list(GROUPS))

    @property
    def columns(self):
        return sorted(c for g in self.include for c in GROUPS[g])

    def __eq__(self, other):
        return isinstance(other, FeatureMask) and self.include == other.include

    def __hash__(self):
        return hash(self.include)

    def __repr__(self):
        return f"FeatureMask({'+'.join(self.include)})"


def apply_mask(v, mask: FeatureMask) -> np.ndarray:
    """Select the masked columns of one vector or a matrix of vectors."""
    v = np.asarray(v)
    return v[..., mask.columns]


class _SequenceCache:
    """Per-sequence features (GC, structure score, single-tube species)."""

    def __init__(self, nn=None, temp_c=REFERENCE_TEMP, params=DEFAULT_PARAMS):
        self.nn = nn or default_params()
        self.temp_c = temp_c
        self.params = params
        self._rows = {}

    def rows(self, seqs):
        missing = sorted({str(s) for s in seqs} - self._rows.keys())
        if missing:
            dh, ds, npairs = duplex_energies([(s, s) for s in missing], self.params, self.nn)
            k = association_constants(dh, ds, npairs, self.temp_c)
            free, dimer = single_tube(k, TUBE_CONC)
            for s, a, aa in zip(missing, free, dimer):
                self._rows[s] = (gc_content(s), single_structure_score(s), a * MICRO, aa * MICRO)
        return np.array([self._rows[str(s)] for s in seqs]).reshape(len(seqs), 4)


def extract_many(pairs, nn=None, params=DEFAULT_PARAMS, temp_c=REFERENCE_TEMP,
                 cache: _SequenceCache | None = None) -> np.ndarray:
    """Feature matrix of shape ``(len(pairs), 9)``."""
    pairs = [(DnaSeq(a), DnaSeq(b)) for a, b in pairs]
    out = np.zeros((len(pairs), N_FEATURES))
    if not pairs:
        return out
    cache = cache or _SequenceCache(nn, temp_c, params)
    out[:, 0] = annealing_scores(pairs, params)
    r1 = cache.rows([p[0] for p in pairs])
    r2 = cache.rows([p[1] for p in pairs])
    out[:, [1, 3, 5, 7]] = r1
    out[:, [2, 4, 6, 8]] = r2
    return out


def extract(s1, s2, nn=None, params=DEFAULT_PARAMS, temp_c=REFERENCE_TEMP) -> np.ndarray:
    return extract_many([(s1, s2)], nn, params, temp_c)[0]


class PairFeaturizer(BaseEstimator, TransformerMixin):
    """Turn sequence pairs into the 9-column feature matrix.

    Stateless apart from a per-sequence cache; ``fit`` does nothing.
    """

    def __init__(self, temp_c=REFERENCE_TEMP, params_path=None):
        self.temp_c = temp_c
        self.params_path = params_path

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        from .thermo import load_params
        if not hasattr(self, "_cache"):
            nn = load_params(self.params_path) if self.params_path else None
            self._cache = _SequenceCache(nn, self.temp_c)
        return extract_many(X, temp_c=self.temp_c, cache=self._cache)


class FeatureSelector(BaseEstimator, TransformerMixin):
    """Keep the columns named by a :class:`FeatureMask` (groups joined by ``+``)."""

    def __init__(self, groups="Aln+GC+SC+PC+SMFE"):
        self.groups = groups

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} feature columns, got {X.shape[1]}")
        self.mask_ = FeatureMask(self.groups)
        self.n_features_in_ = N_FEATURES
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = check_array(X)
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} feature columns, got {X.shape[1]}")
        return apply_mask(X, self.mask_)


class Standardizer(BaseEstimator, TransformerMixin):
    """Z-score columns with training statistics; zero-variance columns keep std 1."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 rows to standardize")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, Z):
        check_is_fitted(self, "mean_")
        return np.asarray(Z) * self.scale_ + self.mean_


# ----------------------------------------------------------------------- CSV

FEATURE_HEADER = ("s1", "s2", *FEATURE_NAMES, "y57", "label")


def write_feature_csv(pairs, X, y57, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for (s1, s2), row, y in zip(pairs, X, y57):
            w.writerow([s1, s2, *(repr(float(v)) for v in row), f"{y:.6f}", label(y)])


def read_feature_csv(path):
    """Return ``(pairs, X, y57, labels)`` from a feature CSV."""
    path = Path(path)
    pairs, rows, ys, labels = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(FEATURE_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(FEATURE_HEADER):
                raise ParseError(path, lineno, f"expected {len(FEATURE_HEADER)} fields")
            try:
                pairs.append((DnaSeq(row[0]), DnaSeq(row[1])))
                rows.append([float(v) for v in row[2:11]])
                ys.append(float(row[11]))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if row[12] not in (LOW, HIGH):
                raise ParseError(path, lineno, f"bad label {row[12]!r}")
            labels.append(row[12])
    X = np.array(rows).reshape(len(rows), N_FEATURES)
    return pairs, X, np.array(ys), np.array(labels)
