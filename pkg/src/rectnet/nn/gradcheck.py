"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _check_layer(layer, x, rng, eps=1e-5, loss_of=None):
    """Max relative error over every parameter and the input for ``sum(R * layer(x))``."""
    out = layer.forward(x)
    weights = rng.normal(size=out.shape)

    def f():
        return float((weights * layer.forward(x)).sum())

    f()
    dx = layer.backward(weights.copy())
    analytic = {k: g.copy() for k, g in layer.grads.items()}
    worst = relative_error(dx, numeric_grad(f, x, eps))
    for k, p in layer.params.items():
        worst = max(worst, relative_error(analytic[k], numeric_grad(f, p, eps)))
    return worst


def layer_gradient_report(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Finite-difference check (64-bit) of each layer type, the loss, single LSTM step and 7-step BPTT."""
    from .layers import Conv2D, Dense, MaxPool2D, SoftmaxHead, nll_loss
    from .recurrent import LSTM

    rng = np.random.default_rng(seed)
    f64 = np.float64
    report = {}
    report["conv"] = _check_layer(Conv2D(2, 3, 3, "relu", rng=rng, dtype=f64), rng.normal(size=(2, 2, 6, 6)), rng, eps)
    report["maxpool"] = _check_layer(MaxPool2D(2), rng.normal(size=(2, 2, 7, 6)), rng, eps)
    report["dense"] = _check_layer(Dense(5, 4, "relu", rng=rng, dtype=f64), rng.normal(size=(3, 5)), rng, eps)

    head = SoftmaxHead(5, rng=rng, dtype=f64)
    head.params["c"] = rng.normal(size=2)
    u = rng.normal(size=(4, 5))
    y = np.array([0, 1, 1, 0])

    def nll():
        return nll_loss(head.forward(u), y)[0]

    _, dprobs, _ = nll_loss(head.forward(u), y)
    du = head.backward(dprobs)
    grads = {k: g.copy() for k, g in head.grads.items()}
    worst = relative_error(du, numeric_grad(nll, u, eps))
    for k, p in head.params.items():
        worst = max(worst, relative_error(grads[k], numeric_grad(nll, p, eps)))
    report["softmax_nll"] = worst

    report["lstm_step"] = _check_layer(LSTM(3, 4, rng=rng, dtype=f64, init_scale=0.5), rng.normal(size=(2, 1, 3)), rng, eps)
    report["lstm_bptt7"] = _check_layer(LSTM(3, 4, rng=rng, dtype=f64, init_scale=0.5), rng.normal(size=(2, 7, 3)), rng, eps)
    return report


def model_gradient_error(model, x, labels, eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error of a whole model's NLL gradient."""
    from .layers import nll_loss, softmax_nll_grad

    def f():
        return nll_loss(model.forward(x), labels)[0]

    probs = model.forward(x)
    model.backward(softmax_nll_grad(probs, labels))
    analytic = {k: g.copy() for k, g in model.named_grads().items()}
    return {k: relative_error(analytic[k], numeric_grad(f, p, eps)) for k, p in model.named_params().items()}
