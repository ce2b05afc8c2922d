"""Sequential model graphs and the three reference architectures."""

from __future__ import annotations

import numpy as np

from .layers import (BatchNorm, Conv1D, Conv2D, Dense, Dropout, Flatten, Layer,
                     NonFiniteValue, ReLU, ShapeMismatch, Sigmoid, Squeeze,
                     layer_from_spec)

N_MAX = 26


class ModelGraph:
    """An ordered stack of layers with a checked shape chain.

    Parameters
    ----------
    layers : list of Layer
    input_shape : tuple
        Per-sample input shape (batch axis excluded).
    kind : str
        Free-form architecture name, stored in checkpoints.
    """

    def __init__(self, layers, input_shape, kind="custom"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.kind = kind
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.out_shape(self.shapes[-1])))
        self.dtype = np.float64

    # ---------------------------------------------------------------- modes
    def train(self):
        for layer in self.layers:
            layer.training = True
        return self

    def eval(self):
        for layer in self.layers:
            layer.training = False
        return self

    def astype(self, dtype):
        self.dtype = np.dtype(dtype).type
        for layer in self.layers:
            layer.astype(dtype)
        return self

    # ------------------------------------------------------------- plumbing
    def forward(self, x, mode="eval"):
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        self.train() if mode == "train" else self.eval()
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"expected input (N, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("non-finite value in forward pass")
        return x

    __call__ = forward

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self):
        """Yield ``(name, layer, key)`` for every parameter tensor."""
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{type(layer).__name__}.{key}", layer, key

    @property
    def n_params(self):
        return int(sum(layer.params[k].size for _, layer, k in self.parameters()))

    @property
    def flatten_width(self):
        for layer, shape in zip(self.layers, self.shapes[1:]):
            if isinstance(layer, Flatten):
                return shape[0]
        return None

    def state(self):
        """Arrays for a checkpoint: parameters plus batch-norm running stats."""
        out = {name: layer.params[key] for name, layer, key in self.parameters()}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                out[f"{i}.BatchNorm.running_mean"] = layer.running_mean
                out[f"{i}.BatchNorm.running_var"] = layer.running_var
        return {k: np.array(v, copy=True) for k, v in out.items()}

    def load_state(self, state):
        expected = self.state()
        if set(state) != set(expected):
            raise ShapeMismatch("state keys do not match the model layout")
        for name, arr in state.items():
            if arr.shape != expected[name].shape:
                raise ShapeMismatch(f"{name}: {arr.shape} vs {expected[name].shape}")
            idx, _, key = name.split(".")
            layer = self.layers[int(idx)]
            value = np.array(arr, dtype=self.dtype, copy=True)
            if key in layer.params:
                layer.params[key] = value
            else:
                setattr(layer, key, value)
        return self

    def summary(self):
        rows = [f"{self.kind}: input {self.input_shape}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            n = sum(v.size for v in layer.params.values())
            rows.append(f"  {layer!r:<48} -> {shape}  params={n}")
        rows.append(f"  total params {self.n_params}")
        return "\n".join(rows)

    @classmethod
    def from_specs(cls, specs, input_shape, kind="custom", seed=0):
        rng = np.random.default_rng(seed)
        return cls([layer_from_spec(s, rng) for s in specs], input_shape, kind)

    def specs(self):
        return [layer.spec() for layer in self.layers]


def _conv_block(layers, conv):
    layers += [conv, ReLU(), BatchNorm(conv.c_out)]


def build_cnn(n_max=N_MAX, seed=0) -> ModelGraph:
    """The larger pair CNN: a 4x9 2-D convolution across the stacked
    one-hot grids, four 1-D convolutions and a three-layer regressor head."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    _conv_block(layers, Conv2D(2, 512, 4, 9, rng))
    layers += [Squeeze(2), Dropout(0.2, rng)]
    _conv_block(layers, Conv1D(512, 512, 9, rng))
    _conv_block(layers, Conv1D(512, 128, 3, rng))
    layers.append(Dropout(0.2, rng))
    _conv_block(layers, Conv1D(128, 128, 3, rng))
    _conv_block(layers, Conv1D(128, 64, 1, rng))
    layers.append(Flatten())
    layers += [Dense(64 * (n_max - 20), 256, rng), ReLU(),
               Dense(256, 128, rng), ReLU(),
               Dropout(0.2, rng), Dense(128, 1, rng)]
    return ModelGraph(layers, (2, 4, n_max), "cnn")


def build_cnn_lite(n_max=N_MAX, seed=0) -> ModelGraph:
    """The smaller pair CNN: three convolutions and a two-layer head."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    _conv_block(layers, Conv2D(2, 256, 4, 9, rng))
    layers += [Squeeze(2), Dropout(0.2, rng)]
    _conv_block(layers, Conv1D(256, 128, 9, rng))
    _conv_block(layers, Conv1D(128, 64, 3, rng))
    layers.append(Flatten())
    layers += [Dense(64 * (n_max - 18), 256, rng), ReLU(),
               Dropout(0.2, rng), Dense(256, 1, rng)]
    return ModelGraph(layers, (2, 4, n_max), "cnn-lite")


MLP_HIDDEN = (117, 18, 7, 19)
MLP_DROPOUT = 0.3296


def build_mlp(input_dim=9, hidden=MLP_HIDDEN, dropout=MLP_DROPOUT, seed=0) -> ModelGraph:
    """Feature MLP with a sigmoid output for binary cross-entropy."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    width = input_dim
    for h in hidden:
        layers += [Dense(width, h, rng), ReLU(), Dropout(dropout, rng)]
        width = h
    layers += [Dense(width, 1, rng), Sigmoid()]
    return ModelGraph(layers, (input_dim,), "mlp")


BUILDERS = {"cnn": build_cnn, "cnn-lite": build_cnn_lite, "mlp": build_mlp}
