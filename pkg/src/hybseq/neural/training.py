"""Losses, Adam, the early-stopping training loop and gradient checking."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .layers import NonFiniteValue
from .model import ModelGraph

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


# ------------------------------------------------------------------ losses

class MSELoss:
    name = "mse"

    def __call__(self, pred, target):
        diff = pred.reshape(-1) - target.reshape(-1)
        self._diff, self._shape = diff, pred.shape
        return float(np.mean(diff * diff))

    def backward(self):
        return (2.0 * self._diff / self._diff.size).reshape(self._shape).astype(self._diff.dtype)


class BCELoss:
    """Binary cross-entropy on probabilities (the model ends in a sigmoid)."""

    name = "bce"

    def __init__(self, eps=1e-7):
        self.eps = eps

    def __call__(self, prob, target):
        p = np.clip(prob.reshape(-1), self.eps, 1 - self.eps)
        t = target.reshape(-1).astype(p.dtype)
        self._p, self._t, self._shape = p, t, prob.shape
        self._inside = (prob.reshape(-1) > self.eps) & (prob.reshape(-1) < 1 - self.eps)
        return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))

    def backward(self):
        p, t = self._p, self._t
        g = (p - t) / (p * (1 - p)) / p.size
        return (g * self._inside).reshape(self._shape).astype(p.dtype)


LOSSES = {"mse": MSELoss, "bce": BCELoss}


# --------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, model: ModelGraph, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.model, self.lr, self.beta1, self.beta2, self.eps = model, lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(layer.params[k]) for name, layer, k in model.parameters()}
        self.v = {name: np.zeros_like(layer.params[k]) for name, layer, k in model.parameters()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for name, layer, key in self.model.parameters():
            g = layer.grads[key]
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            layer.params[key] = layer.params[key] - update.astype(layer.params[key].dtype)


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 256
    loss: str = "mse"
    patience: int = 3
    max_epochs: int | None = None
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_delta: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)


def evaluate_loss(model, X, y, loss, batch_size=1024):
    """Eval-mode loss over a whole array, batch-weighted."""
    total, n = 0.0, len(X)
    for start in range(0, n, batch_size):
        xb, yb = X[start:start + batch_size], y[start:start + batch_size]
        total += loss(model.forward(xb, "eval"), yb) * len(xb)
    return total / n


def train(model: ModelGraph, X, y, X_val, y_val, cfg: TrainConfig, callback=None):
    """Minibatch Adam with early stopping on the validation loss.

    Stops once the validation loss has not improved for ``cfg.patience``
    consecutive epochs (or at ``cfg.max_epochs``) and restores the weights
    of the best epoch. Returns ``(model, history)``.
    """
    if not len(X) or not len(X_val):
        raise ValueError("training and validation sets must be non-empty")
    loss = LOSSES[cfg.loss]()
    X = np.asarray(X, dtype=model.dtype)
    y = np.asarray(y, dtype=model.dtype)
    X_val = np.asarray(X_val, dtype=model.dtype)
    y_val = np.asarray(y_val, dtype=model.dtype)
    opt = Adam(model, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    # dropout masks draw from the same seeded stream
    for layer in model.layers:
        if hasattr(layer, "rng"):
            layer.rng = np.random.default_rng(rng.integers(2**63))
    hist = History()
    best, best_state, stale = math.inf, model.state(), 0
    epoch = 0
    while cfg.max_epochs is None or epoch < cfg.max_epochs:
        t0 = time.perf_counter()
        order = rng.permutation(len(X))
        running, seen = 0.0, 0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out = model.forward(X[idx], "train")
            value = loss(out, y[idx])
            if not math.isfinite(value):
                raise NonFiniteValue(f"non-finite training loss at epoch {epoch}")
            model.backward(loss.backward())
            opt.step()
            running += value * len(idx)
            seen += len(idx)
        val = evaluate_loss(model, X_val, y_val, loss)
        hist.train_loss.append(running / seen)
        hist.val_loss.append(val)
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, running / seen, val,
                 hist.seconds[-1])
        if callback is not None:
            callback(epoch, hist)
        if val < best - cfg.min_delta:
            best, best_state, stale = val, model.state(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
        epoch += 1
        if stale >= cfg.patience:
            break
    model.load_state(best_state)
    model.eval()
    return model, hist


def predict_batch(model: ModelGraph, X, batch_size=512, clamp=True) -> np.ndarray:
    """Eval-mode predictions, one per input row, in input order."""
    X = np.asarray(X)
    out = np.empty(len(X), dtype=np.float64)
    for start in range(0, len(X), batch_size):
        out[start:start + batch_size] = model.forward(X[start:start + batch_size], "eval").reshape(-1)
    return np.clip(out, 0.0, 1.0) if clamp else out


# ----------------------------------------------------------- gradient check

def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)) + np.max(np.abs(b)), 1e-12))


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f()`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def gradcheck_layer(layer, x, training=True, seed=0, h=1e-6):
    """Compare analytic and numeric gradients of ``sum(w * layer(x))``.

    ``w`` is a fixed random projection so every output element matters.
    Returns a dict of relative errors keyed by ``"x"`` and parameter name.
    Dropout layers must be checked with a frozen mask (``training=False``)
    or, as here, a re-seeded generator per evaluation.
    """
    rng = np.random.default_rng(seed)
    layer.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    layer.training = training
    state = getattr(layer, "rng", None)
    base = None if state is None else state.bit_generator.state

    def run():
        if base is not None:
            layer.rng.bit_generator.state = base
        return layer.forward(x)

    out = run()
    w = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(w * run()))

    run()
    dx = layer.backward(w)
    errs = {"x": _rel_err(dx, numeric_grad(f, x, h))}
    analytic = {k: np.array(v, copy=True) for k, v in layer.grads.items()}
    for key in layer.params:
        errs[key] = _rel_err(analytic[key], numeric_grad(f, layer.params[key], h))
    return errs


def gradcheck_loss(loss, pred, target, h=1e-6):
    pred = np.array(pred, dtype=np.float64)
    loss(pred, target)
    analytic = loss.backward()
    numeric = numeric_grad(lambda: loss(pred, target), pred, h)
    return _rel_err(analytic, numeric)
