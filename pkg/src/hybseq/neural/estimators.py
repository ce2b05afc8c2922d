"""Checkpoints and scikit-learn style wrappers around the model graphs."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..seq import one_hot_pairs
from .model import BUILDERS, N_MAX, ModelGraph
from .training import TrainConfig, predict_batch, train

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: ModelGraph, path, extra=None) -> None:
    """Write an ``.npz`` archive: one array per tensor plus a JSON manifest
    (format version, architecture, layer specs and the shape table)."""
    state = model.state()
    manifest = {
        "format": "hybseq-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "input_shape": list(model.input_shape),
        "layers": model.specs(),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "extra": extra or {},
    }
    buf = {k: v.astype(np.float32) for k, v in state.items()}
    buf["__manifest__"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **buf)


def load_checkpoint(path):
    """Return ``(model, manifest)``; the model is in eval mode, float32."""
    try:
        with np.load(path) as data:
            manifest = json.loads(bytes(data["__manifest__"]).decode())
            state = {k: data[k] for k in data.files if k != "__manifest__"}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from None
    if manifest.get("format") != "hybseq-checkpoint":
        raise CheckpointError(f"{path}: unknown format")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {manifest.get('version')}")
    for k, shape in manifest["shapes"].items():
        if list(state[k].shape) != shape:
            raise CheckpointError(f"{path}: tensor {k} has shape {state[k].shape}, manifest {shape}")
    model = ModelGraph.from_specs(manifest["layers"], manifest["input_shape"], manifest["kind"])
    model.astype(np.float32)
    model.load_state(state)
    return model.eval(), manifest


ORIENTATIONS = ("parallel", "antiparallel")


def encode_pairs(pairs, n_max=N_MAX, orientation="antiparallel"):
    """One-hot grids for a list of pairs.

    ``antiparallel`` writes the second strand 3'->5' so that, for a perfect
    duplex of equal-length strands, paired bases share a column;
    ``parallel`` writes both strands 5'->3'.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    if orientation == "antiparallel":
        pairs = [(a, str(b)[::-1]) for a, b in pairs]
    return one_hot_pairs(list(pairs), n_max)


def _as_grid(X, n_max, orientation):
    """Accept either a list of sequence pairs or a ready ``(n, 2, 4, n_max)`` array."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return X.astype(np.float32, copy=False)
    return encode_pairs(list(X), n_max, orientation)


class YieldCNN(BaseEstimator, RegressorMixin):
    """Pair CNN regressor predicting yield in [0, 1].

    Parameters
    ----------
    arch : {"cnn", "cnn-lite"}
    lr, batch_size, patience, max_epochs, seed
        Training settings (Adam, MSE, early stopping on validation loss).
    val_fraction : float
        Share of the training data held out for early stopping when ``fit``
        gets no explicit validation set.
    n_max : int
        Grid width; shorter strands are zero padded.
    orientation : {"antiparallel", "parallel"}
        Direction in which the second strand is written, see
        :func:`encode_pairs`. Ignored when pre-encoded grids are passed.
    swap_augment : bool
        Also train on every pair with its strands exchanged (yield is
        symmetric in the two strands).
    symmetrize : bool
        Predict the mean over both strand orders, which makes predictions
        exactly symmetric. Needs sequence pairs rather than grids.
    """

    def __init__(self, arch="cnn-lite", lr=1e-4, batch_size=256, patience=3,
                 max_epochs=None, seed=0, val_fraction=0.1, n_max=N_MAX,
                 orientation="antiparallel", swap_augment=False, symmetrize=False,
                 verbose=False):
        self.arch = arch
        self.lr = lr
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.val_fraction = val_fraction
        self.n_max = n_max
        self.orientation = orientation
        self.swap_augment = swap_augment
        self.symmetrize = symmetrize
        self.verbose = verbose

    def _grid(self, X):
        return _as_grid(X, self.n_max, self.orientation)

    def fit(self, X, y, X_val=None, y_val=None):
        if self.arch not in ("cnn", "cnn-lite"):
            raise ValueError(f"arch must be 'cnn' or 'cnn-lite', got {self.arch!r}")
        if self.swap_augment and not (isinstance(X, np.ndarray) and X.ndim == 4):
            X = list(X)
            X = X + [(b, a) for a, b in X]
            y = np.concatenate([np.asarray(y), np.asarray(y)])
        grid = self._grid(X)
        y = np.asarray(y, dtype=np.float32).reshape(-1)
        if len(grid) != len(y):
            raise ValueError(f"{len(grid)} inputs but {len(y)} targets")
        if X_val is None:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(grid))
            n_val = max(1, int(round(self.val_fraction * len(grid))))
            val, tr = order[:n_val], order[n_val:]
            grid, g_val, y, y_val = grid[tr], grid[val], y[tr], y[val]
        else:
            g_val = self._grid(X_val)
            y_val = np.asarray(y_val, dtype=np.float32).reshape(-1)
        self.model_ = BUILDERS[self.arch](self.n_max, seed=self.seed).astype(np.float32)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, loss="mse",
                          patience=self.patience, max_epochs=self.max_epochs, seed=self.seed)
        cb = None
        if self.verbose:
            def cb(epoch, hist):
                print(f"epoch {epoch}: train {hist.train_loss[-1]:.6f} "
                      f"val {hist.val_loss[-1]:.6f} ({hist.seconds[-1]:.1f}s)", flush=True)
        self.model_, self.history_ = train(self.model_, grid, y, g_val, y_val, cfg, cb)
        return self

    def grids(self, X):
        """Encoded inputs for :meth:`predict_grids`: one grid, or two when
        predictions are symmetrized."""
        if not self.symmetrize:
            return (self._grid(X),)
        if isinstance(X, np.ndarray) and X.ndim == 4:
            raise ValueError("symmetrize needs sequence pairs, not encoded grids")
        X = list(X)
        return self._grid(X), self._grid([(b, a) for a, b in X])

    def predict_grids(self, grids, batch_size=512):
        check_is_fitted(self, "model_")
        preds = [predict_batch(self.model_, g, batch_size) for g in grids]
        return preds[0] if len(preds) == 1 else np.mean(preds, axis=0)

    def predict(self, X, batch_size=512):
        return self.predict_grids(self.grids(X), batch_size)

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path, {"estimator": "YieldCNN", "params": self.get_params()})

    @classmethod
    def load(cls, path):
        model, manifest = load_checkpoint(path)
        params = manifest["extra"].get("params", {"arch": model.kind})
        est = cls(**params)
        est.model_ = model
        return est


class FeatureMLP(BaseEstimator, ClassifierMixin):
    """Binary classifier on the nine pair features (sigmoid output, BCE).

    Expects standardized inputs; put a :class:`~hybseq.features.Standardizer`
    in front of it in a pipeline.
    """

    def __init__(self, hidden=(117, 18, 7, 19), dropout=0.3296, lr=2e-4, batch_size=1024,
                 patience=3, max_epochs=None, seed=0, val_fraction=0.1):
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.val_fraction = val_fraction

    def fit(self, X, y, X_val=None, y_val=None):
        from .model import build_mlp
        X = check_array(X, dtype=np.float32)
        y = np.asarray(y).astype(np.float32).reshape(-1)
        if set(np.unique(y)) - {0.0, 1.0}:
            raise ValueError("targets must be 0/1")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        if X_val is None:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(X))
            n_val = max(1, int(round(self.val_fraction * len(X))))
            X, X_val, y, y_val = X[order[n_val:]], X[order[:n_val]], y[order[n_val:]], y[order[:n_val]]
        else:
            X_val = check_array(X_val, dtype=np.float32)
            y_val = np.asarray(y_val, dtype=np.float32).reshape(-1)
        self.model_ = build_mlp(X.shape[1], tuple(self.hidden), self.dropout,
                                seed=self.seed).astype(np.float32)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, loss="bce",
                          patience=self.patience, max_epochs=self.max_epochs, seed=self.seed)
        self.model_, self.history_ = train(self.model_, X, y, X_val, y_val, cfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        p = predict_batch(self.model_, X, 4096)
        return np.column_stack([1 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.decision_function(X) >= 0.5).astype(int)

    def save(self, path):
        check_is_fitted(self, "model_")
        params = self.get_params()
        params["hidden"] = list(params["hidden"])
        save_checkpoint(self.model_, path, {"estimator": "FeatureMLP", "params": params})

    @classmethod
    def load(cls, path):
        model, manifest = load_checkpoint(path)
        params = manifest["extra"].get("params", {})
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        est = cls(**params)
        est.model_ = model
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = model.input_shape[0]
        return est
