"""Minimal dense feedforward stack with exact reverse-mode gradients.

Everything is float64. Layers are affine -> (batch norm) -> activation ->
(inverted dropout). Train mode normalizes with batch statistics and draws
dropout masks from the caller's generator; eval mode uses running statistics
and no dropout, so the eval forward is the plain network.

Checkpoints are a single file: one JSON header line (architecture, array
shapes, counters) followed by the raw little-endian float64 blocks in header
order, so they round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


@dataclass
class _Layer:
    w: np.ndarray
    b: np.ndarray
    activation: str  # "relu" or "identity"
    bn: bool = False
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    dropout: float = 0.0


class GradientTape:
    """Per-layer forward caches for exactly one backward pass."""

    def __init__(self, mode: str):
        self.mode = mode
        self.caches: list[dict] = []
        self.consumed = False


class DenseNet:
    """Feedforward net; widths fixed at build time, parameters mutable."""

    def __init__(self, layers: list[_Layer]):
        self.layers = layers

    # -- construction ------------------------------------------------------

    @classmethod
    def build(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        batch_norm: bool = False,
        dropout: float = 0.0,
        hidden_activation: str = "relu",
        output_scale: float = 1.0,
    ) -> "DenseNet":
        """He-uniform hidden layers, Xavier-uniform identity output layer.

        ``output_scale`` shrinks the final layer's init; control policies
        start near the zero action that way and train much more stably.
        """
        if len(sizes) < 2:
            raise ValueError("need at least input and output widths")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        layers = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            last = i == len(sizes) - 2
            if last:
                limit = output_scale * np.sqrt(6.0 / (fan_in + fan_out))
                act = "identity"
            else:
                limit = np.sqrt(6.0 / fan_in)
                act = hidden_activation
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            layer = _Layer(w=w, b=b, activation=act)
            if not last and batch_norm:
                layer.bn = True
                layer.gamma = np.ones(fan_out)
                layer.beta = np.zeros(fan_out)
                layer.running_mean = np.zeros(fan_out)
                layer.running_var = np.ones(fan_out)
            if not last:
                layer.dropout = dropout
            layers.append(layer)
        return cls(layers)

    def clone(self) -> "DenseNet":
        layers = []
        for l in self.layers:
            layers.append(_Layer(
                w=l.w.copy(), b=l.b.copy(), activation=l.activation, bn=l.bn,
                gamma=None if l.gamma is None else l.gamma.copy(),
                beta=None if l.beta is None else l.beta.copy(),
                running_mean=None if l.running_mean is None else l.running_mean.copy(),
                running_var=None if l.running_var is None else l.running_var.copy(),
                dropout=l.dropout,
            ))
        return DenseNet(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def params(self) -> list[np.ndarray]:
        """Trainable arrays, in a fixed order (per layer: w, b, [gamma, beta])."""
        out = []
        for l in self.layers:
            out.extend([l.w, l.b])
            if l.bn:
                out.extend([l.gamma, l.beta])
        return out

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, GradientTape]:
        """Batched forward pass; returns output and a single-use tape.

        Train mode requires ``rng`` when any layer has dropout.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input width {x.shape[1]} != net input {self.in_dim}")
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        tape = GradientTape(mode)
        h = x
        for l in self.layers:
            cache: dict = {"x": h}
            z = h @ l.w + l.b
            if l.bn:
                if mode == "train":
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    n = z.shape[0]
                    unbiased = var * n / max(n - 1, 1)
                    l.running_mean += _BN_MOMENTUM * (mu - l.running_mean)
                    l.running_var += _BN_MOMENTUM * (unbiased - l.running_var)
                else:
                    mu, var = l.running_mean, l.running_var
                inv_std = 1.0 / np.sqrt(var + _BN_EPS)
                xhat = (z - mu) * inv_std
                z = l.gamma * xhat + l.beta
                cache["xhat"] = xhat
                cache["inv_std"] = inv_std
            cache["z"] = z
            h = np.maximum(z, 0.0) if l.activation == "relu" else z
            if l.dropout > 0.0 and mode == "train":
                if rng is None:
                    raise ValueError("train-mode forward with dropout needs an rng")
                mask = (rng.random(h.shape) >= l.dropout) / (1.0 - l.dropout)
                h = h * mask
                cache["mask"] = mask
            tape.caches.append(cache)
        return h, tape

    def backward(self, tape: GradientTape, dy: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Exact gradients of sum(dy * output) w.r.t. params() and the input."""
        if tape.consumed:
            raise RuntimeError("gradient tape already consumed")
        tape.consumed = True
        dy = np.atleast_2d(np.asarray(dy, dtype=float))
        grads: list[list[np.ndarray]] = []
        d = dy
        for l, cache in zip(reversed(self.layers), reversed(tape.caches)):
            if "mask" in cache:
                d = d * cache["mask"]
            if l.activation == "relu":
                d = d * (cache["z"] > 0.0)
            if l.bn:
                xhat = cache["xhat"]
                dgamma = (d * xhat).sum(axis=0)
                dbeta = d.sum(axis=0)
                dxhat = d * l.gamma
                if tape.mode == "train":
                    n = xhat.shape[0]
                    d = (cache["inv_std"] / n) * (
                        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                    )
                else:
                    d = dxhat * cache["inv_std"]
                bn_grads = [dgamma, dbeta]
            else:
                bn_grads = []
            dw = cache["x"].T @ d
            db = d.sum(axis=0)
            d = d @ l.w.T
            grads.append([dw, db, *bn_grads])
        flat = []
        for g in reversed(grads):
            flat.extend(g)
        return flat, d


class AdamState:
    """Bias-corrected ADAM over a fixed parameter list (updates in place)."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError("gradient shape mismatch")
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One in-place ADAM update; returns (params, state) for convenience."""
    state.step(params, grads)
    return params, state


def soft_update(target: DenseNet, source: DenseNet, rho: float) -> DenseNet:
    """Blend every parameter p_t <- rho * p_t + (1 - rho) * p_s in place."""
    tp, sp = target.params(), source.params()
    if len(tp) != len(sp) or any(a.shape != b.shape for a, b in zip(tp, sp)):
        raise ValueError("architecture mismatch in soft_update")
    for a, b in zip(tp, sp):
        a *= rho
        a += (1.0 - rho) * b
    for lt, ls in zip(target.layers, source.layers):
        if lt.bn:
            lt.running_mean = rho * lt.running_mean + (1.0 - rho) * ls.running_mean
            lt.running_var = rho * lt.running_var + (1.0 - rho) * ls.running_var
    return target


# -- checkpoint I/O ---------------------------------------------------------

def _array_table(net: DenseNet) -> list[tuple[str, np.ndarray]]:
    rows = []
    for i, l in enumerate(net.layers):
        rows.append((f"layer{i}/w", l.w))
        rows.append((f"layer{i}/b", l.b))
        if l.bn:
            rows.append((f"layer{i}/gamma", l.gamma))
            rows.append((f"layer{i}/beta", l.beta))
            rows.append((f"layer{i}/running_mean", l.running_mean))
            rows.append((f"layer{i}/running_var", l.running_var))
    return rows


def save_checkpoint(net: DenseNet, path: str, extra: dict | None = None) -> None:
    """JSON header line + little-endian float64 blocks, bit-exact round trip."""
    rows = _array_table(net)
    header = {
        "layout": "hedgelab-dense-v1",
        "layers": [
            {"in": l.w.shape[0], "out": l.w.shape[1], "activation": l.activation,
             "bn": l.bn, "dropout": l.dropout}
            for l in net.layers
        ],
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in rows],
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, a in rows:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[DenseNet, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("layout") != "hedgelab-dense-v1":
            raise ValueError(f"not a hedgelab checkpoint: {path}")
        layers = []
        for spec in header["layers"]:
            layer = _Layer(
                w=np.zeros((spec["in"], spec["out"])), b=np.zeros(spec["out"]),
                activation=spec["activation"], bn=spec["bn"], dropout=spec["dropout"],
            )
            if layer.bn:
                layer.gamma = np.zeros(spec["out"])
                layer.beta = np.zeros(spec["out"])
                layer.running_mean = np.zeros(spec["out"])
                layer.running_var = np.zeros(spec["out"])
            layers.append(layer)
        net = DenseNet(layers)
        for meta, (_, target) in zip(header["arrays"], _array_table(net)):
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(meta["shape"])
            target[...] = data
    return net, header["extra"]
