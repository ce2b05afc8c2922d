"""Model construction and persistence shared by the CLI and the benchmark.

Sequence models (``cnn``, ``cnn-lite``) regress yield from one-hot grids.
Feature models (``mlp``, ``lda``, ``qda``) are pipelines of
:class:`FeatureSelector`, :class:`Standardizer` and a classifier over the
nine pair features. Everything is saved as ``.npz`` with a JSON manifest.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np
from sklearn.pipeline import Pipeline

from .baseline import LinearDiscriminant, QuadraticDiscriminant
from .features import FeatureSelector, Standardizer
from .neural.estimators import (CheckpointError, FeatureMLP, YieldCNN, load_checkpoint,
                                save_checkpoint)

SEQUENCE_MODELS = ("cnn", "cnn-lite")
FEATURE_MODELS = ("mlp", "lda", "qda")
MODEL_KINDS = SEQUENCE_MODELS + FEATURE_MODELS
ALL_GROUPS = "Aln+GC+SC+PC+SMFE"


def make_model(kind: str, seed: int = 0, groups: str = ALL_GROUPS, **kw):
    """Unfitted estimator for ``kind``; extra keywords go to the final step."""
    if kind in SEQUENCE_MODELS:
        return YieldCNN(arch=kind, seed=seed, **kw)
    if kind == "mlp":
        clf = FeatureMLP(seed=seed, **kw)
    elif kind == "lda":
        clf = LinearDiscriminant(**kw)
    elif kind == "qda":
        clf = QuadraticDiscriminant(**kw)
    else:
        raise ValueError(f"unknown model {kind!r}; choose from {MODEL_KINDS}")
    return Pipeline([("select", FeatureSelector(groups)), ("scale", Standardizer()), ("clf", clf)])


def fit_model(model, pairs, y, X=None, val=None):
    """Fit on training pairs.

    ``y`` is the reference-temperature yield. Sequence models regress it;
    feature models learn the High/Low label derived from it and need the
    feature matrix ``X``. ``val`` is an optional ``(pairs, y, X)`` triple.
    """
    y = np.asarray(y, dtype=float)
    if isinstance(model, YieldCNN):
        if val is not None:
            return model.fit(pairs, y, val[0], val[1])
        return model.fit(pairs, y)
    if X is None:
        raise ValueError("feature models need the feature matrix")
    clf = model.named_steps["clf"]
    if isinstance(clf, FeatureMLP):
        target = (y >= 0.2).astype(float)
        if val is not None:
            pre = Pipeline(model.steps[:-1]).fit(X)
            clf.fit(pre.transform(X), target, pre.transform(val[2]),
                    (np.asarray(val[1]) >= 0.2).astype(float))
            return model
        return model.fit(X, target)
    return model.fit(X, np.where(y >= 0.2, "High", "Low"))


def model_kind(model) -> str:
    if isinstance(model, YieldCNN):
        return model.arch
    clf = model.named_steps["clf"]
    return {FeatureMLP: "mlp", LinearDiscriminant: "lda", QuadraticDiscriminant: "qda"}[type(clf)]


def predict_scores(model, pairs=None, X=None):
    """Yield estimates (sequence models) or P(High) (feature models)."""
    if isinstance(model, YieldCNN):
        return model.predict(pairs)
    proba = model.predict_proba(X)
    return proba[:, 1]


def decision_threshold(model) -> float:
    """Score at or above which a pair counts as High."""
    return 0.2 if isinstance(model, YieldCNN) else 0.5


# --------------------------------------------------------------- persistence

_FORMAT = "hybseq-feature-model"


def _pipeline_arrays(model):
    scale = model.named_steps["scale"]
    clf = model.named_steps["clf"]
    arrays = {"scale.mean": scale.mean_, "scale.scale": scale.scale_}
    kind = model_kind(model)
    if kind == "lda":
        arrays.update({"clf.coef": clf.coef_, "clf.intercept": np.array([clf.intercept_]),
                       "clf.means": clf.means_, "clf.priors": clf.priors_})
    elif kind == "qda":
        arrays.update({"clf.means": clf.means_, "clf.priors": clf.priors_,
                       "clf.cov": np.stack(clf.covariances_)})
    return arrays


def save_model(model, path) -> None:
    kind = model_kind(model)
    if kind in SEQUENCE_MODELS:
        model.save(path)
        return
    groups = model.named_steps["select"].groups
    if kind == "mlp":
        clf = model.named_steps["clf"]
        params = clf.get_params()
        params["hidden"] = list(params["hidden"])
        extra = {"estimator": "FeatureMLP", "params": params, "groups": groups,
                 "scale_mean": model.named_steps["scale"].mean_.tolist(),
                 "scale_scale": model.named_steps["scale"].scale_.tolist()}
        save_checkpoint(clf.model_, path, extra)
        return
    clf = model.named_steps["clf"]
    manifest = {"format": _FORMAT, "version": 1, "kind": kind, "groups": groups,
                "params": clf.get_params(), "classes": [str(c) for c in clf.classes_]}
    arrays = _pipeline_arrays(model)
    arrays["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(),
                                           dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _restore_pipeline(kind, groups, mean, scale, clf):
    sel = FeatureSelector(groups).fit(np.zeros((2, 9)))
    std = Standardizer()
    std.mean_, std.scale_ = np.asarray(mean, float), np.asarray(scale, float)
    std.n_features_in_ = len(std.mean_)
    return Pipeline([("select", sel), ("scale", std), ("clf", clf)])


def load_model(path):
    """Inverse of :func:`save_model`."""
    try:
        with np.load(path) as data:
            manifest = json.loads(bytes(data["__manifest__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__manifest__"}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a readable model file ({exc})") from None
    if manifest.get("format") == "hybseq-checkpoint":
        extra = manifest.get("extra", {})
        if extra.get("estimator") == "YieldCNN":
            return YieldCNN.load(path)
        if extra.get("estimator") == "FeatureMLP":
            clf = FeatureMLP.load(path)
            return _restore_pipeline("mlp", extra["groups"], extra["scale_mean"],
                                     extra["scale_scale"], clf)
        raise CheckpointError(f"{path}: unknown estimator {extra.get('estimator')!r}")
    if manifest.get("format") != _FORMAT or manifest.get("version") != 1:
        raise CheckpointError(f"{path}: unknown model format")
    kind = manifest["kind"]
    classes = np.array(manifest["classes"], dtype=object)
    if kind == "lda":
        clf = LinearDiscriminant(**manifest["params"])
        clf.coef_ = arrays["clf.coef"]
        clf.intercept_ = float(arrays["clf.intercept"][0])
    elif kind == "qda":
        clf = QuadraticDiscriminant(**manifest["params"])
        clf.covariances_ = list(arrays["clf.cov"])
        from .baseline import _inverse
        inv = [_inverse(c, "covariance") for c in clf.covariances_]
        clf._prec = [p for p, _ in inv]
        clf._logdet = [d for _, d in inv]
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    clf.classes_ = classes
    clf.means_ = arrays["clf.means"]
    clf.priors_ = arrays["clf.priors"]
    clf.n_features_in_ = clf.means_.shape[1]
    return _restore_pipeline(kind, manifest["groups"], arrays["scale.mean"],
                             arrays["scale.scale"], clf)
