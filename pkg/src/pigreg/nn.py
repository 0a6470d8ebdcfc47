"""Small dense networks with hand-written backprop and Adam.

The op set is fixed: dense layers, ELU on hidden layers and one elementwise
output head. Parameters live in a plain dict of float64 arrays named
``W0, b0, W1, b1, ...`` so optimisers and checkpoints can treat every
network the same way.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .mathfun import elu, elu_grad, sigmoid, softplus

HEADS = ("identity", "softplus", "softplus_shift1")

# softplus(-100) + 1 rounds to exactly 1.0 in double precision, so the shifted
# head adds a tiny constant to keep its output strictly above 1.
SHIFT_EXCESS = 1e-8


class TapeReusedError(RuntimeError):
    pass


class Tape:
    """Forward intermediates for exactly one backward pass."""

    def __init__(self, inputs, pre, head_pre):
        self.inputs = inputs  # activations entering each dense layer
        self.pre = pre  # hidden pre-activations
        self.head_pre = head_pre
        self.used = False


def _head(kind, z):
    if kind == "identity":
        return z
    if kind == "softplus":
        return softplus(z)
    return 1.0 + softplus(z) + SHIFT_EXCESS


def _head_grad(kind, z):
    if kind == "identity":
        return np.ones_like(z)
    return sigmoid(z)


class Mlp:
    def __init__(self, sizes, head="identity", rng=None, params=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("sizes needs at least input and output widths, all >= 1")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
        self.sizes = sizes
        self.head = head
        if params is None:
            if rng is None:
                raise ValueError("need an rng to initialise parameters")
            params = {}
            for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
                params[f"b{i}"] = np.zeros(fan_out)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if self.params[f"W{i}"].shape != (fan_in, fan_out) or self.params[f"b{i}"].shape != (fan_out,):
                raise ValueError(f"parameter shapes of layer {i} do not match sizes {sizes}")

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def copy(self):
        return Mlp(self.sizes, self.head, params={k: v.copy() for k, v in self.params.items()})

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input of shape (B, {self.sizes[0]}), got {x.shape}")
        inputs, pre = [], []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                pre.append(z)
                h = elu(z)
            else:
                head_pre = z
        return _head(self.head, head_pre), Tape(inputs, pre, head_pre)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: Tape, dy):
        """Gradients of a scalar loss given dL/dy; returns (param grads, dL/dx)."""
        if tape.used:
            raise TapeReusedError("backward already consumed this tape")
        tape.used = True
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != tape.head_pre.shape:
            raise ValueError(f"dL/dy has shape {dy.shape}, forward output was {tape.head_pre.shape}")
        grads = {}
        dz = dy * _head_grad(self.head, tape.head_pre)
        for i in reversed(range(self.n_layers)):
            grads[f"W{i}"] = tape.inputs[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            dh = dz @ self.params[f"W{i}"].T
            if i > 0:
                dz = dh * elu_grad(tape.pre[i - 1])
        return grads, dh

    # -- checkpoints ---------------------------------------------------------

    def to_dict(self):
        return {
            "format": "mlp/1",
            "sizes": self.sizes,
            "head": self.head,
            "params": {
                k: {"shape": list(v.shape), "data": [repr(float(t)) for t in v.ravel()]}
                for k, v in sorted(self.params.items())
            },
        }

    @classmethod
    def from_dict(cls, obj):
        if obj.get("format") != "mlp/1":
            raise ValueError(f"unsupported checkpoint format {obj.get('format')!r}")
        params = {
            k: np.array([float(t) for t in v["data"]], dtype=np.float64).reshape(v["shape"])
            for k, v in obj["params"].items()
        }
        return cls(obj["sizes"], obj["head"], params=params)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr=None):
    """In-place Adam update of ``params`` (dict of arrays) with bias correction."""
    lr = state.lr if lr is None else lr
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
