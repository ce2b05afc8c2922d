"""Layers with hand-written forward and backward passes.

Every layer keeps its parameters in ``params`` and, after ``backward``,
the matching gradients in ``grads`` (same keys, same shapes). Inputs are
channels-first: ``(N, C, H, W)`` for 2-D convolutions, ``(N, C, L)`` for
1-D ones and ``(N, D)`` for dense layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class Layer:
    """Base class. Stateless layers only override ``forward``/``backward``."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.training = False

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def spec(self):
        return {"type": type(self).__name__}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "type")
        return f"{type(self).__name__}({args})"


def _kaiming_uniform(rng, fan_in, shape):
    # kaiming-uniform with negative slope sqrt(5), the usual default
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bias_uniform(rng, fan_in, n):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = _kaiming_uniform(rng, n_in, (n_in, n_out))
        self.params["b"] = _bias_uniform(rng, n_in, n_out)

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeMismatch(f"Dense expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T

    def spec(self):
        return {"type": "Dense", "n_in": self.n_in, "n_out": self.n_out}


class Conv1D(Layer):
    """Valid 1-D convolution (cross-correlation), stride 1."""

    def __init__(self, c_in, c_out, k, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k = c_in, c_out, k
        fan_in = c_in * k
        self.params["W"] = _kaiming_uniform(rng, fan_in, (c_out, c_in, k))
        self.params["b"] = _bias_uniform(rng, fan_in, c_out)

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.c_in or in_shape[1] < self.k:
            raise ShapeMismatch(f"Conv1D({self.c_in}->{self.c_out}, k={self.k}) got {in_shape}")
        return (self.c_out, in_shape[1] - self.k + 1)

    def forward(self, x):
        n, c, length = x.shape
        l_out = length - self.k + 1
        # (N, C, Lout, K) -> (N, Lout, C, K) -> rows of C*K
        cols = sliding_window_view(x, self.k, axis=2).transpose(0, 2, 1, 3)
        cols = cols.reshape(n * l_out, c * self.k)
        self._cols, self._in_shape = cols, x.shape
        w = self.params["W"].reshape(self.c_out, -1)
        out = cols @ w.T + self.params["b"]
        return np.ascontiguousarray(out.reshape(n, l_out, self.c_out).transpose(0, 2, 1))

    def backward(self, dout):
        n, c, length = self._in_shape
        l_out = length - self.k + 1
        d2 = dout.transpose(0, 2, 1).reshape(n * l_out, self.c_out)
        self.grads["W"] = (d2.T @ self._cols).reshape(self.params["W"].shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(self.c_out, -1)).reshape(n, l_out, c, self.k)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        for j in range(self.k):
            dx[:, :, j:j + l_out] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx

    def spec(self):
        return {"type": "Conv1D", "c_in": self.c_in, "c_out": self.c_out, "k": self.k}


class Conv2D(Layer):
    """Valid 2-D convolution (cross-correlation), stride 1."""

    def __init__(self, c_in, c_out, kh, kw, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw
        fan_in = c_in * kh * kw
        self.params["W"] = _kaiming_uniform(rng, fan_in, (c_out, c_in, kh, kw))
        self.params["b"] = _bias_uniform(rng, fan_in, c_out)

    def out_shape(self, in_shape):
        if (len(in_shape) != 3 or in_shape[0] != self.c_in
                or in_shape[1] < self.kh or in_shape[2] < self.kw):
            raise ShapeMismatch(
                f"Conv2D({self.c_in}->{self.c_out}, {self.kh}x{self.kw}) got {in_shape}")
        return (self.c_out, in_shape[1] - self.kh + 1, in_shape[2] - self.kw + 1)

    def forward(self, x):
        n, c, h, w = x.shape
        ho, wo = h - self.kh + 1, w - self.kw + 1
        # (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
        cols = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        cols = cols.reshape(n * ho * wo, c * self.kh * self.kw)
        self._cols, self._in_shape = cols, x.shape
        out = cols @ self.params["W"].reshape(self.c_out, -1).T + self.params["b"]
        return np.ascontiguousarray(out.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2))

    def backward(self, dout):
        n, c, h, w = self._in_shape
        ho, wo = h - self.kh + 1, w - self.kw + 1
        d2 = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.c_out)
        self.grads["W"] = (d2.T @ self._cols).reshape(self.params["W"].shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(self.c_out, -1))
        dcols = dcols.reshape(n, ho, wo, c, self.kh, self.kw)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def spec(self):
        return {"type": "Conv2D", "c_in": self.c_in, "c_out": self.c_out,
                "kh": self.kh, "kw": self.kw}


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        self._out = out
        return out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


class Dropout(Layer):
    """Inverted dropout: scaling happens at training time."""

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.p = p
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x):
        if not self.training or self.p == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape, dtype=np.float32) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def spec(self):
        return {"type": "Dropout", "p": self.p}


class BatchNorm(Layer):
    """Batch normalisation over the channel axis 1 of ``(N, C)`` or ``(N, C, L)``.

    Training mode normalises with batch statistics and updates running
    averages ``running = (1 - momentum) * running + momentum * batch``
    (unbiased batch variance in the running estimate); eval mode uses the
    running averages.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeMismatch(f"BatchNorm({self.channels}) got {in_shape}")
        return in_shape

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _bcast(self, v, x):
        return v.reshape((1, -1) + (1,) * (x.ndim - 2))

    def forward(self, x):
        axes = self._axes(x)
        if self.training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.channels
            unbiased = var * m / max(m - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._xhat, self._inv_std, self._batch_stats = xhat, inv_std, self.training
        return xhat * self._bcast(self.params["gamma"], x) + self._bcast(self.params["beta"], x)

    def backward(self, dout):
        axes = self._axes(dout)
        xhat = self._xhat
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        g = self._bcast(self.params["gamma"] * self._inv_std, dout)
        if not self._batch_stats:
            return dout * g
        m = dout.size // self.channels
        dxhat_sum = self._bcast(self.grads["beta"], dout)
        dxhat_xhat = self._bcast(self.grads["gamma"], dout)
        return g / m * (m * dout - dxhat_sum - xhat * dxhat_xhat)

    def spec(self):
        return {"type": "BatchNorm", "channels": self.channels,
                "momentum": self.momentum, "eps": self.eps}


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Squeeze(Layer):
    """Drop a singleton spatial axis: ``(N, C, 1, W) -> (N, C, W)``."""

    def __init__(self, axis=2):
        super().__init__()
        self.axis = axis

    def out_shape(self, in_shape):
        if in_shape[self.axis - 1] != 1:
            raise ShapeMismatch(f"cannot squeeze axis {self.axis} of {in_shape}")
        return tuple(d for i, d in enumerate(in_shape) if i != self.axis - 1)

    def forward(self, x):
        self._shape = x.shape
        return np.squeeze(x, axis=self.axis)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def spec(self):
        return {"type": "Squeeze", "axis": self.axis}


LAYER_TYPES = {cls.__name__: cls for cls in
               (Dense, Conv1D, Conv2D, ReLU, Sigmoid, Dropout, BatchNorm, Flatten, Squeeze)}


def layer_from_spec(spec, rng=None):
    spec = dict(spec)
    kind = spec.pop("type")
    cls = LAYER_TYPES[kind]
    if cls in (Dense, Conv1D, Conv2D, Dropout):
        return cls(**spec, rng=rng)
    return cls(**spec)
