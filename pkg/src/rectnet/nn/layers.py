"""Layers with explicit forward/backward passes.

Every layer keeps its trainable arrays in ``params`` and, after
``backward``, the matching gradients in ``grads`` (overwritten on each
call). Feature maps are laid out (N, C, H, W).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels

ACTIVATIONS = ("relu", "identity")


class Layer:
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, need_input_grad: bool = True):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self

    def describe(self) -> str:
        return type(self).__name__


def _he_uniform(rng, fan_in, shape, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """Valid cross-correlation summed over input maps, plus bias, then activation."""

    def __init__(self, in_maps: int, out_maps: int, size: int, activation: str = "relu",
                 rng=None, dtype=np.float64):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_maps, self.out_maps, self.size = in_maps, out_maps, size
        self.activation = activation
        self.params["K"] = _he_uniform(rng, in_maps * size * size, (out_maps, in_maps, size, size), dtype)
        self.params["b"] = np.zeros(out_maps, dtype=dtype)
        self._cache = None

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (self.out_maps, h - self.size + 1, w - self.size + 1)

    def forward(self, x):
        N, C, H, W = x.shape
        if C != self.in_maps:
            raise ValueError(f"conv expects {self.in_maps} input maps, got {C}")
        k = self.size
        if H < k or W < k:
            raise ValueError(f"input {H}x{W} smaller than kernel {k}")
        Ho, Wo = H - k + 1, W - k + 1
        cols = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C, Ho, Wo, k, k)
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
        K = self.params["K"].reshape(self.out_maps, -1)
        pre = cols @ K.T + self.params["b"]
        out = np.maximum(pre, 0) if self.activation == "relu" else pre
        self._cache = (x.shape, cols, out)
        return out.reshape(N, Ho, Wo, self.out_maps).transpose(0, 3, 1, 2)

    def backward(self, dout, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        (N, C, H, W), cols, out = self._cache
        k = self.size
        Ho, Wo = H - k + 1, W - k + 1
        d = dout.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, self.out_maps)
        if self.activation == "relu":
            d = d * (out > 0)
        self.grads["K"] = (d.T @ cols).reshape(self.params["K"].shape)
        self.grads["b"] = d.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (d @ self.params["K"].reshape(self.out_maps, -1)).reshape(N, Ho, Wo, C, k, k)
        dx = np.zeros((N, C, H, W), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def describe(self):
        return f"C({self.size},{self.out_maps})"


class MaxPool2D(Layer):
    """Non-overlapping a x a max pooling; odd trailing rows/columns dropped."""

    def __init__(self, a: int = 2):
        super().__init__()
        self.a = a
        self._cache = None

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.a, w // self.a)

    def forward(self, x):
        out, arg = kernels.maxpool_forward(x, self.a)
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        shape, arg = self._cache
        return kernels.maxpool_backward(dout, arg, shape, self.a)

    def describe(self):
        return "P"


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_input_grad: bool = True):
        return dout.reshape(self._shape)


class Dense(Layer):
    """``out = f(x @ q + b)`` with ``q`` of shape (in, out)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng=None, dtype=np.float64):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(activation)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params["q"] = _he_uniform(rng, n_in, (n_in, n_out), dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self._cache = None

    def output_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense expects {self.n_in} inputs, got {x.shape[-1]}")
        pre = x @ self.params["q"] + self.params["b"]
        out = np.maximum(pre, 0) if self.activation == "relu" else pre
        self._cache = (x, out)
        return out

    def backward(self, dout, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, out = self._cache
        d = dout * (out > 0) if self.activation == "relu" else dout
        self.grads["q"] = x.T @ d
        self.grads["b"] = d.sum(axis=0)
        return d @ self.params["q"].T if need_input_grad else None

    def describe(self):
        return f"FC({self.n_out})"


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SoftmaxHead(Layer):
    """Two-class softmax over ``u @ R + c``; column 1 is the nodule class."""

    def __init__(self, n_in: int, n_classes: int = 2, bias: bool = True, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = np.sqrt(6.0 / (n_in + n_classes))
        self.params["R"] = rng.uniform(-limit, limit, size=(n_in, n_classes)).astype(dtype)
        if bias:
            self.params["c"] = np.zeros(n_classes, dtype=dtype)
        self.n_in = n_in
        self._cache = None

    def output_shape(self, in_shape):
        return (self.params["R"].shape[1],)

    def forward(self, u):
        logits = u @ self.params["R"]
        if "c" in self.params:
            logits = logits + self.params["c"]
        p = softmax(logits)
        self._cache = (u, p)
        return p

    def backward(self, dprobs, need_input_grad: bool = True):
        """Chain through the softmax Jacobian from d(loss)/d(probabilities)."""
        _, p = self._cache
        dlogits = p * (dprobs - (dprobs * p).sum(axis=-1, keepdims=True))
        return self.backward_logits(dlogits, need_input_grad)

    def backward_logits(self, dlogits, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        u, _ = self._cache
        self.grads["R"] = u.T @ dlogits
        if "c" in self.params:
            self.grads["c"] = dlogits.sum(axis=0)
        return dlogits @ self.params["R"].T if need_input_grad else None

    def describe(self):
        return "softmax"


PROB_FLOOR = 1e-12


def nll_loss(probs, labels):
    """Mean negative log-likelihood of the true class and its gradient w.r.t. ``probs``.

    Probabilities are floored at 1e-12; the third return value counts floored rows.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    pt = probs[np.arange(n), labels]
    clamped = pt < PROB_FLOOR
    pt = np.maximum(pt, PROB_FLOOR)
    loss = float(-np.log(pt).sum() / n)
    d = np.zeros_like(probs)
    d[np.arange(n), labels] = -1.0 / (n * pt)
    return loss, d, int(clamped.sum())


def softmax_nll_grad(probs, labels):
    """d(mean NLL)/d(logits) for a softmax output."""
    labels = np.asarray(labels, dtype=np.int64)
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return d / len(labels)


class Sequential(Layer):
    def __init__(self, layers=()):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout, need_input_grad: bool = True):
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            need = need_input_grad or i > 0
            dout = self.layers[i].backward(dout, need)
        return dout

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}{i}", layer

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self
