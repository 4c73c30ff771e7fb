"""Small feed-forward actor/critic networks with hand-written gradients.

No autodiff framework: forward passes cache activations, backward passes
apply the chain rule explicitly. This keeps the training substrate fully
inspectable and makes finite-difference gradient checks cheap.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeMismatch(ValueError):
    pass


def init_orthogonal(shape: tuple[int, int], gain: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Orthogonal init via QR of a Gaussian matrix; singular values all
    equal gain."""
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # deterministic sign convention
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Fully-connected net: x -> hidden tanh layers -> linear output.

    Default architecture is three 256-unit tanh hidden layers (the third
    layer's activation is a constructor toggle)."""

    def __init__(self, in_dim: int, out_dim: int,
                 hidden: tuple[int, ...] = (256, 256, 256),
                 out_gain: float = 0.01,
                 third_layer_tanh: bool = True,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [in_dim, *hidden, out_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(dims) - 1):
            gain = np.sqrt(2.0) if i < len(dims) - 2 else out_gain
            self.weights.append(init_orthogonal((dims[i], dims[i + 1]), gain, rng))
            self.biases.append(np.zeros(dims[i + 1]))
        # per-hidden-layer activation flags
        self.activations = [True] * len(hidden)
        if len(hidden) >= 3 and not third_layer_tanh:
            self.activations[2] = False
        self.in_dim = in_dim
        self.out_dim = out_dim

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        n = len(self.weights)
        self.weights = [np.asarray(p, dtype=float) for p in params[:n]]
        self.biases = [np.asarray(p, dtype=float) for p in params[n:]]

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """Deterministic forward pass; x is (in_dim,) or (batch, in_dim).
        Pass a list as `cache` to record activations for backward()."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x.reshape(-1, self.in_dim) if x.shape[-1] == self.in_dim else None
        if h is None:
            raise ShapeMismatch(f"input dim {x.shape[-1]} != {self.in_dim}")
        if cache is not None:
            cache.clear()
            cache.append(h)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.activations) and self.activations[i]:
                h = np.tanh(h)
            if cache is not None:
                cache.append(h)
        return h[0] if squeeze else h

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (grads aligned with parameters(), d(loss)/d(input))."""
        dout = np.asarray(dout, dtype=float)
        if dout.ndim == 1:
            dout = dout.reshape(1, -1)
        d_w = [None] * len(self.weights)
        d_b = [None] * len(self.biases)
        dh = dout
        for i in reversed(range(len(self.weights))):
            h_out = cache[i + 1]
            h_in = cache[i]
            if i < len(self.activations) and self.activations[i]:
                dh = dh * (1.0 - h_out ** 2)
            d_w[i] = h_in.T @ dh
            d_b[i] = np.sum(dh, axis=0)
            dh = dh @ self.weights[i].T
        return [*d_w, *d_b], dh


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian policy: state-dependent mean, state-independent
    learnable log-std."""

    mean_net: Mlp
    log_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.log_std is None:
            self.log_std = np.zeros(self.mean_net.out_dim)

    def parameters(self) -> list[np.ndarray]:
        return [*self.mean_net.parameters(), self.log_std]

    def set_parameters(self, params: list[np.ndarray]) -> None:
        self.mean_net.set_parameters(params[:-1])
        self.log_std = np.asarray(params[-1], dtype=float)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, s: np.ndarray, cache: list | None = None) -> np.ndarray:
        return self.mean_net.forward(s, cache)

    def sample(self, s: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        mu = self.mean(s)
        a = mu + self.std * rng.normal(size=mu.shape)
        return a, self.log_prob_value(mu, a)

    def log_prob_value(self, mu: np.ndarray, a: np.ndarray,
                       std_scale=1.0) -> float | np.ndarray:
        """log N(a; mu, diag((std_scale * std)^2)) summed over action
        dimensions; std_scale may be scalar or per-sample (batch,) or
        (batch, 1)."""
        scale = np.asarray(std_scale, dtype=float)
        if scale.ndim == 1:
            scale = scale[:, None]
        z = (a - mu) / (scale * self.std)
        return np.sum(-0.5 * z ** 2 - self.log_std - np.log(scale)
                      - 0.5 * LOG_2PI, axis=-1)

    def log_prob(self, s: np.ndarray, a: np.ndarray) -> float | np.ndarray:
        return self.log_prob_value(self.mean(s), a)

    def log_prob_grads(self, mu: np.ndarray, a: np.ndarray,
                       std_scale=1.0) -> tuple[np.ndarray, np.ndarray]:
        """(d logp / d mu, d logp / d log_std), batched per sample."""
        scale = np.asarray(std_scale, dtype=float)
        if scale.ndim == 1:
            scale = scale[:, None]
        z = (a - mu) / (scale * self.std)
        return z / (scale * self.std), z ** 2 - 1.0


def log_prob(policy: GaussianPolicy, s: np.ndarray, a: np.ndarray):
    """Joint log-density plus the per-dimension terms."""
    mu = policy.mean(s)
    z = (a - mu) / policy.std
    per_dim = -0.5 * z ** 2 - policy.log_std - 0.5 * LOG_2PI
    return np.sum(per_dim, axis=-1), per_dim


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(self.m):
            raise ShapeMismatch("parameter count changed under the optimizer")
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g ** 2
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"ARNN"
_VERSION = 1


def save_arrays(path, arrays: list[np.ndarray], hyperparams: dict | None = None) -> None:
    """Versioned binary blob: magic, version, array count, then per array a
    shape header and row-major float64 data. Hyperparameters go to a JSON
    sidecar next to the blob."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(arrays)))
        for a in arrays:
            a = np.asarray(a, dtype=np.float64)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(np.ascontiguousarray(a).tobytes())
    if hyperparams is not None:
        with open(str(path) + ".json", "w") as f:
            json.dump(hyperparams, f, indent=2, sort_keys=True)


def load_arrays(path) -> list[np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("bad checkpoint magic")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = []
        for _ in range(count):
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * n), dtype=np.float64).reshape(shape)
            out.append(data.copy())
    return out
