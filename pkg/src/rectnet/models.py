"""ReCTnet and the multi-channel CNN baseline.

Architectures are written in the compact layer notation ``I(c)``,
``C(size, maps)``, ``P`` (2x2 max-pool) and ``FC(units)``; all hidden
activations are ReLU.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass

import numpy as np

from .nn.layers import Conv2D, Dense, Flatten, Layer, MaxPool2D, Sequential, SoftmaxHead, softmax_nll_grad
from .nn.recurrent import LSTM

_TOKEN = re.compile(r"\s*(I|C|P|FC)\s*(?:\(([^)]*)\))?\s*")


def parse_arch(spec: str) -> list[tuple]:
    """``"I(1),C(5,16),P,FC(412)"`` -> ``[("I", 1), ("C", 5, 16), ("P",), ("FC", 412)]``."""
    out = []
    pos = 0
    spec = spec.strip()
    while pos < len(spec):
        m = _TOKEN.match(spec, pos)
        if not m:
            raise ValueError(f"cannot parse architecture at {spec[pos:]!r}")
        kind, args = m.group(1), m.group(2)
        nums = tuple(int(a) for a in args.split(",")) if args else ()
        expected = {"I": 1, "C": 2, "P": 0, "FC": 1}[kind]
        if len(nums) != expected:
            raise ValueError(f"{kind} takes {expected} arguments, got {nums}")
        out.append((kind,) + nums)
        pos = m.end()
        if pos < len(spec):
            if spec[pos] != ",":
                raise ValueError(f"expected ',' at {spec[pos:]!r}")
            pos += 1
    if not out or out[0][0] != "I":
        raise ValueError("architecture must start with I(channels)")
    return out


def build_stack(spec: str, patch: int, rng, dtype) -> tuple[Sequential, int]:
    """Sequential network for one architecture string; returns it with its input channel count."""
    tokens = parse_arch(spec)
    channels = tokens[0][1]
    shape = (channels, patch, patch)
    layers: list[Layer] = []
    for tok in tokens[1:]:
        if tok[0] == "C":
            if len(shape) != 3:
                raise ValueError("convolution after a fully connected layer")
            layer = Conv2D(shape[0], tok[2], tok[1], "relu", rng=rng, dtype=dtype)
            if shape[1] < tok[1]:
                raise ValueError(f"{patch}px input too small for {spec}")
        elif tok[0] == "P":
            layer = MaxPool2D(2)
        else:
            if len(shape) == 3:
                flat = Flatten()
                layers.append(flat)
                shape = flat.output_shape(shape)
            layer = Dense(shape[0], tok[1], "relu", rng=rng, dtype=dtype)
        shape = layer.output_shape(shape)
        if min(shape) <= 0:
            raise ValueError(f"{patch}px input collapses to {shape} in {spec}")
        layers.append(layer)
    return Sequential(layers), channels


@dataclass(frozen=True)
class RectNetConfig:
    cnn: str = "I(1),C(5,16),P,C(4,16),C(3,32),P,C(3,64),P,FC(412)"
    lstm_layers: int = 2
    hidden: int = 612
    mlp: tuple[int, ...] = (1024, 512)
    k: int = 3
    patch: int = 50
    lstm_hidden_bias: bool = True
    softmax_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mlp", tuple(int(m) for m in self.mlp))

    @property
    def seq_len(self) -> int:
        return 2 * self.k + 1


@dataclass(frozen=True)
class CnnBaselineConfig:
    arch: str = "I(7),C(5,32),C(3,32),P,C(3,64),C(3,64),P,C(2,96),P,FC(816),FC(412)"
    k: int = 3
    patch: int = 50
    softmax_bias: bool = True


RECTNET_PRESETS = {
    "paper": RectNetConfig(),
    "desk": RectNetConfig(cnn="I(1),C(5,8),P,C(4,8),C(3,16),P,C(3,32),P,FC(64)",
                          hidden=48, mlp=(96, 48), patch=30),
}
CNN_PRESETS = {
    "paper": CnnBaselineConfig(),
    "desk": CnnBaselineConfig(arch="I(7),C(5,16),C(3,16),P,C(3,32),C(3,32),P,C(2,48),P,FC(96),FC(48)",
                              patch=30),
}


class Model:
    """Common plumbing: named parameters, gradients, dtype, parameter counts."""

    kind = "model"

    def modules(self) -> list[tuple[str, Layer]]:
        raise NotImplementedError

    def named_params(self, include_frozen: bool = True) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self.modules():
            if not include_frozen and prefix.split(".")[0] in self.frozen:
                continue
            for key, arr in layer.params.items():
                out[f"{prefix}.{key}"] = arr
        return out

    def named_grads(self, include_frozen: bool = False) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self.modules():
            if not include_frozen and prefix.split(".")[0] in self.frozen:
                continue
            for key in layer.params:
                out[f"{prefix}.{key}"] = layer.grads[key]
        return out

    def load_params(self, params: dict[str, np.ndarray], strict: bool = True) -> None:
        own = {f"{prefix}.{key}": (layer, key) for prefix, layer in self.modules() for key in layer.params}
        if strict and set(own) != set(params):
            missing = sorted(set(own) - set(params))
            extra = sorted(set(params) - set(own))
            raise ValueError(f"parameter mismatch; missing {missing[:5]}, unexpected {extra[:5]}")
        for name, value in params.items():
            if name not in own:
                continue
            layer, key = own[name]
            cur = layer.params[key]
            if cur.shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} != {cur.shape}")
            layer.params[key] = np.array(value, dtype=cur.dtype)

    def count_parameters(self) -> int:
        return int(sum(p.size for p in self.named_params().values()))

    def astype(self, dtype):
        for _, layer in self.modules():
            layer.astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Nodule probabilities for a batch of inputs, evaluated in chunks."""
        out = np.empty(len(x), dtype=np.float64)
        for s in range(0, len(x), batch_size):
            out[s:s + batch_size] = self.forward(x[s:s + batch_size])[:, 1]
        return out

    def loss_and_backward(self, x, labels) -> float:
        from .nn.layers import nll_loss
        probs = self.forward(x)
        loss, _, _ = nll_loss(probs, labels)
        self.backward(softmax_nll_grad(probs, labels))
        return loss


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


class CnnClassifier(Model):
    """Single-patch CNN with a softmax head (ReCTnet pretraining, one slice in)."""

    kind = "cnn_pretrain"

    def __init__(self, config: RectNetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.cnn, channels = build_stack(config.cnn, config.patch, rng, self.dtype)
        if channels != 1:
            raise ValueError("ReCTnet CNN submodule takes one channel")
        q = self.cnn.output_shape((1, config.patch, config.patch))
        if len(q) != 1:
            raise ValueError("CNN submodule must end in a fully connected layer")
        self.head = SoftmaxHead(q[0], bias=config.softmax_bias, rng=rng, dtype=self.dtype)
        self.frozen: set[str] = set()

    def modules(self):
        return [(f"cnn.{i}", l) for i, l in self.cnn.named_layers()] + [("head", self.head)]

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        return self.head.forward(self.cnn.forward(x))

    def backward(self, dlogits, need_input_grad: bool = False):
        du = self.head.backward_logits(dlogits)
        return self.cnn.backward(du, need_input_grad)

    def cnn_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.named_params().items() if k.startswith("cnn.")}

    def config_dict(self):
        return _config_dict(self.config)


class ReCTNet(Model):
    """Shared per-slice CNN -> stacked LSTMs -> concatenation -> MLP -> softmax."""

    kind = "rectnet"

    def __init__(self, config: RectNetConfig = RectNetConfig(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.cnn, channels = build_stack(config.cnn, config.patch, rng, self.dtype)
        if channels != 1:
            raise ValueError("ReCTnet CNN submodule takes one channel")
        q = self.cnn.output_shape((1, config.patch, config.patch))
        if len(q) != 1:
            raise ValueError("CNN submodule must end in a fully connected layer")
        self.Q = q[0]
        widths = [self.Q] + [config.hidden] * config.lstm_layers
        self.lstms = [LSTM(widths[i], widths[i + 1], hidden_bias=config.lstm_hidden_bias,
                           rng=rng, dtype=self.dtype) for i in range(config.lstm_layers)]
        self.P = config.seq_len * config.hidden
        mlp, width = [], self.P
        for units in config.mlp:
            mlp.append(Dense(width, units, "relu", rng=rng, dtype=self.dtype))
            width = units
        self.mlp = Sequential(mlp)
        self.head = SoftmaxHead(width, bias=config.softmax_bias, rng=rng, dtype=self.dtype)
        self.frozen: set[str] = set()

    def modules(self):
        mods = [(f"cnn.{i}", l) for i, l in self.cnn.named_layers()]
        mods += [(f"lstm.{i}", l) for i, l in enumerate(self.lstms)]
        mods += [(f"mlp.{i}", l) for i, l in self.mlp.named_layers()]
        mods.append(("head", self.head))
        return mods

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        N, T, M, M2 = x.shape
        if T != self.config.seq_len or M != self.config.patch or M2 != M:
            raise ValueError(f"expected stacks of shape ({self.config.seq_len}, {self.config.patch}, "
                             f"{self.config.patch}), got {x.shape[1:]}")
        self._N = N
        seq = self.cnn.forward(x.reshape(N * T, 1, M, M)).reshape(N, T, self.Q)
        for lstm in self.lstms:
            seq = lstm.forward(seq)
        z = seq.reshape(N, self.P)
        return self.head.forward(self.mlp.forward(z))

    def backward(self, dlogits, need_input_grad: bool = False):
        N, T = self._N, self.config.seq_len
        dz = self.mlp.backward(self.head.backward_logits(dlogits))
        dseq = dz.reshape(N, T, self.config.hidden)
        for i, lstm in reversed(list(enumerate(self.lstms))):
            need = i > 0 or "cnn" not in self.frozen or need_input_grad
            dseq = lstm.backward(dseq, need)
        if "cnn" in self.frozen and not need_input_grad:
            for _, layer in self.cnn.named_layers():
                for key, p in layer.params.items():
                    layer.grads[key] = np.zeros_like(p)
            return None
        M = self.config.patch
        dx = self.cnn.backward(dseq.reshape(N * T, self.Q), need_input_grad)
        return dx.reshape(N, T, M, M) if need_input_grad else None

    def embed(self, x):
        """Per-slice CNN representations (N, T, Q)."""
        x = np.asarray(x, dtype=self.dtype)
        N, T, M, _ = x.shape
        return self.cnn.forward(x.reshape(N * T, 1, M, M)).reshape(N, T, self.Q)

    def load_cnn(self, cnn_params: dict[str, np.ndarray]) -> None:
        self.load_params({k: v for k, v in cnn_params.items() if k.startswith("cnn.")}, strict=False)
        expected = {k for k in self.named_params() if k.startswith("cnn.")}
        if expected != {k for k in cnn_params if k.startswith("cnn.")}:
            raise ValueError("pretrained CNN does not match the ReCTnet CNN submodule")

    def config_dict(self):
        return _config_dict(self.config)


class MultiChannelCNN(Model):
    """Baseline fusing the 2k+1 patches as input channels of the first convolution."""

    kind = "cnn"

    def __init__(self, config: CnnBaselineConfig = CnnBaselineConfig(), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.net, channels = build_stack(config.arch, config.patch, rng, self.dtype)
        if channels != 2 * config.k + 1:
            raise ValueError(f"I({channels}) does not match a {2 * config.k + 1}-slice stack")
        out = self.net.output_shape((channels, config.patch, config.patch))
        self.head = SoftmaxHead(out[0], bias=config.softmax_bias, rng=rng, dtype=self.dtype)
        self.frozen: set[str] = set()

    def modules(self):
        return [(f"net.{i}", l) for i, l in self.net.named_layers()] + [("head", self.head)]

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != (2 * self.config.k + 1, self.config.patch, self.config.patch):
            raise ValueError(f"unexpected stack shape {x.shape[1:]}")
        return self.head.forward(self.net.forward(x))

    def backward(self, dlogits, need_input_grad: bool = False):
        return self.net.backward(self.head.backward_logits(dlogits), need_input_grad)

    def config_dict(self):
        return _config_dict(self.config)


def rectnet_from_preset(preset: str, seed: int = 0, dtype=np.float32) -> ReCTNet:
    return ReCTNet(RECTNET_PRESETS[preset], seed=seed, dtype=dtype)


def cnn_from_preset(preset: str, seed: int = 0, dtype=np.float32) -> MultiChannelCNN:
    return MultiChannelCNN(CNN_PRESETS[preset], seed=seed, dtype=dtype)


def count_parameters(model: Model) -> int:
    return model.count_parameters()


def describe(model: Model) -> list[dict]:
    """Layer-by-layer audit: notation, output shape (per example) and parameter count."""
    rows = []

    def walk(seq: Sequential, shape, prefix):
        for name, layer in seq.named_layers(prefix):
            shape = layer.output_shape(shape)
            if isinstance(layer, Flatten):
                continue
            rows.append({"layer": name, "type": layer.describe(), "output": tuple(shape),
                         "params": layer.n_params()})
        return shape

    if isinstance(model, (ReCTNet, CnnClassifier)):
        cfg = model.config
        rows.append({"layer": "input", "type": "I(1)" + (f" x{cfg.seq_len}" if isinstance(model, ReCTNet) else ""),
                     "output": (1, cfg.patch, cfg.patch), "params": 0})
        shape = walk(model.cnn, (1, cfg.patch, cfg.patch), "cnn.")
        if isinstance(model, ReCTNet):
            T = cfg.seq_len
            for i, lstm in enumerate(model.lstms):
                rows.append({"layer": f"lstm.{i}", "type": lstm.describe(), "output": (T, lstm.hidden),
                             "params": lstm.n_params()})
            rows.append({"layer": "concat", "type": "concat", "output": (model.P,), "params": 0})
            shape = walk(model.mlp, (model.P,), "mlp.")
    else:
        cfg = model.config
        c = 2 * cfg.k + 1
        rows.append({"layer": "input", "type": f"I({c})", "output": (c, cfg.patch, cfg.patch), "params": 0})
        shape = walk(model.net, (c, cfg.patch, cfg.patch), "net.")
    rows.append({"layer": "head", "type": "softmax", "output": (2,), "params": model.head.n_params()})
    return rows


def format_description(model: Model) -> str:
    rows = describe(model)
    lines = [f"{'layer':<10} {'type':<12} {'output':<18} {'params':>12}"]
    for r in rows:
        lines.append(f"{r['layer']:<10} {r['type']:<12} {str(r['output']):<18} {r['params']:>12,}")
    lines.append(f"{'total':<10} {'':<12} {'':<18} {model.count_parameters():>12,}")
    return "\n".join(lines)


def model_from_config(kind: str, config: dict, seed: int = 0, dtype=np.float32) -> Model:
    if kind == "rectnet":
        return ReCTNet(RectNetConfig(**config), seed=seed, dtype=dtype)
    if kind == "cnn":
        return MultiChannelCNN(CnnBaselineConfig(**config), seed=seed, dtype=dtype)
    if kind == "cnn_pretrain":
        return CnnClassifier(RectNetConfig(**config), seed=seed, dtype=dtype)
    raise ValueError(f"unknown model kind {kind!r}")
