"""LSTM layer with backpropagation through time.

Gate weights are packed along the last axis in the order (i, f, o, g):
``Wv`` is (Q, 4B), ``Wh`` is (B, 4B), ``b`` and the optional second bias
``bh`` are (4B,). ``gate_weights`` unpacks them into the per-gate
(B x Q), (B x B), (B,) form.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer

GATES = ("i", "f", "o", "g")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTM(Layer):
    def __init__(self, n_in: int, hidden: int, hidden_bias: bool = True, init_scale: float = 0.1,
                 rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        B = hidden
        self.n_in, self.hidden = n_in, hidden
        u = lambda *shape: rng.uniform(-init_scale, init_scale, size=shape).astype(dtype)
        self.params["Wv"] = u(n_in, 4 * B)
        self.params["Wh"] = u(B, 4 * B)
        self.params["b"] = u(4 * B)
        if hidden_bias:
            self.params["bh"] = u(4 * B)
        self._cache = None

    def output_shape(self, in_shape):
        T, _ = in_shape
        return (T, self.hidden)

    def gate_weights(self, gate: str):
        """``(W_kv, W_kh, b_k)`` for one gate; the two biases are summed."""
        g = GATES.index(gate)
        B = self.hidden
        sl = slice(g * B, (g + 1) * B)
        bias = self.params["b"][sl] + (self.params["bh"][sl] if "bh" in self.params else 0)
        return self.params["Wv"][:, sl].T, self.params["Wh"][:, sl].T, bias

    def _bias(self):
        b = self.params["b"]
        return b + self.params["bh"] if "bh" in self.params else b

    def step(self, v, h_prev, c_prev):
        """One time step for a batch: returns ``(h, c, gates)``."""
        B = self.hidden
        a = v @ self.params["Wv"] + h_prev @ self.params["Wh"] + self._bias()
        i = sigmoid(a[:, :B])
        f = sigmoid(a[:, B:2 * B])
        o = sigmoid(a[:, 2 * B:3 * B])
        g = np.tanh(a[:, 3 * B:])
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        return h, c, (i, f, o, g)

    def forward(self, x):
        """``x`` is (N, T, Q); returns all hidden states (N, T, B). Zero initial state."""
        N, T, Q = x.shape
        if Q != self.n_in:
            raise ValueError(f"LSTM expects input width {self.n_in}, got {Q}")
        B = self.hidden
        h = np.zeros((N, B), dtype=x.dtype)
        c = np.zeros((N, B), dtype=x.dtype)
        H = np.empty((N, T, B), dtype=x.dtype)
        steps = []
        for t in range(T):
            h_prev, c_prev = h, c
            h, c, gates = self.step(x[:, t], h_prev, c_prev)
            steps.append((h_prev, c_prev, c, np.tanh(c), gates))
            H[:, t] = h
        self._cache = (x, steps)
        return H

    def backward(self, dH, need_input_grad: bool = True):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, steps = self._cache
        N, T, Q = x.shape
        B = self.hidden
        Wv, Wh = self.params["Wv"], self.params["Wh"]
        dWv = np.zeros_like(Wv)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * B, dtype=dH.dtype)
        dx = np.empty_like(x) if need_input_grad else None
        dh_next = np.zeros((N, B), dtype=dH.dtype)
        dc_next = np.zeros((N, B), dtype=dH.dtype)
        da = np.empty((N, 4 * B), dtype=dH.dtype)
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, c, tc, (i, f, o, g) = steps[t]
            dh = dH[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da[:, :B] = dc * g * i * (1.0 - i)
            da[:, B:2 * B] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * B:3 * B] = dh * tc * o * (1.0 - o)
            da[:, 3 * B:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dWv += x[:, t].T @ da
            dWh += h_prev.T @ da
            db += da.sum(axis=0)
            dh_next = da @ Wh.T
            if need_input_grad:
                dx[:, t] = da @ Wv.T
        self.grads["Wv"] = dWv
        self.grads["Wh"] = dWh
        self.grads["b"] = db
        if "bh" in self.params:
            self.grads["bh"] = db.copy()
        return dx

    def describe(self):
        return f"LSTM({self.hidden})"


def lstm_step(layer: LSTM, v, h_prev, c_prev):
    """Single-example step: vectors in, ``(h, c)`` out."""
    v = np.asarray(v)
    h_prev = np.asarray(h_prev)
    c_prev = np.asarray(c_prev)
    if v.shape != (layer.n_in,) or h_prev.shape != (layer.hidden,) or c_prev.shape != (layer.hidden,):
        raise ValueError("lstm_step dimension mismatch")
    h, c, _ = layer.step(v[None], h_prev[None], c_prev[None])
    return h[0], c[0]
