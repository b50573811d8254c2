"""Minimal dense/conv network stack with hand-derived reverse-mode gradients.

Everything runs on float64 numpy arrays with samples as rows. The layer set
(dense, conv2d, spatial soft arg-max, relu, tanh, sigmoid) is exactly what the
four planning networks need; gradients are written out per layer kind and
checked against finite differences rather than routed through an autodiff
tape.
"""

from __future__ import annotations

import json

import numpy as np


class NumericError(RuntimeError):
    """A forward or backward pass produced a non-finite value."""


def _check_finite(arr: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")
    return arr


# ---------------------------------------------------------------------------
# Layers
#
# Each layer implements:
#   out_dim(in_dim)      -> declared output width (validates in_dim)
#   forward(x)           -> (y, cache)   with x, y of shape (n, dim)
#   backward(cache, dy)  -> (param_grads, dx)   param_grads parallel to params
#   params()             -> list of parameter arrays (mutated in place by
#                           optimizers)
# ---------------------------------------------------------------------------


class Dense:
    """Affine layer y = x @ W + b with W of shape (in_dim, out_dim)."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, W: np.ndarray | None = None,
                 b: np.ndarray | None = None):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError("dense dims must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = np.zeros((in_dim, out_dim)) if W is None else np.asarray(W, dtype=float)
        self.b = np.zeros(out_dim) if b is None else np.asarray(b, dtype=float)
        if self.W.shape != (in_dim, out_dim) or self.b.shape != (out_dim,):
            raise ValueError("dense parameter shapes do not match declared dims")

    def check_in(self, in_dim):
        if in_dim != self.in_dim:
            raise ValueError(f"dense expects input dim {self.in_dim}, got {in_dim}")
        return self.out_dim

    def init_params(self, rng: np.random.Generator) -> None:
        bound = np.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.W = rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim))
        self.b = np.zeros(self.out_dim)

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        return x @ self.W + self.b, x

    def backward(self, cache, dy):
        x = cache
        dW = x.T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.W.T
        return [dW, db], dx

    def spec_dict(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class Conv2D:
    """Valid-padding convolution over row-major (channel, height, width) input.

    Input rows are flattened (in_channels*H*W,) vectors; output rows are
    flattened (out_channels*Ho*Wo,). Square kernels only.
    """

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, in_height: int, in_width: int,
                 W: np.ndarray | None = None, b: np.ndarray | None = None):
        if min(in_channels, out_channels, kernel_size, stride, in_height, in_width) <= 0:
            raise ValueError("conv2d dims must be positive")
        if kernel_size > in_height or kernel_size > in_width:
            raise ValueError("conv2d kernel larger than input")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.in_height = in_height
        self.in_width = in_width
        self.out_height = (in_height - kernel_size) // stride + 1
        self.out_width = (in_width - kernel_size) // stride + 1
        k = kernel_size
        self.W = (np.zeros((out_channels, in_channels, k, k)) if W is None
                  else np.asarray(W, dtype=float).reshape(out_channels, in_channels, k, k))
        self.b = np.zeros(out_channels) if b is None else np.asarray(b, dtype=float)

    @property
    def in_dim(self):
        return self.in_channels * self.in_height * self.in_width

    @property
    def out_dim(self):
        return self.out_channels * self.out_height * self.out_width

    def check_in(self, in_dim):
        if in_dim != self.in_dim:
            raise ValueError(f"conv2d expects input dim {self.in_dim}, got {in_dim}")
        return self.out_dim

    def init_params(self, rng: np.random.Generator) -> None:
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        fan_out = self.out_channels * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.W = rng.uniform(-bound, bound, size=(self.out_channels, self.in_channels, k, k))
        self.b = np.zeros(self.out_channels)

    def params(self):
        return [self.W, self.b]

    def _patches(self, imgs):
        # imgs (n, C, H, W) -> (n, Ho*Wo, C*k*k) via a sliding window view
        k, s = self.kernel_size, self.stride
        win = np.lib.stride_tricks.sliding_window_view(imgs, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s, :, :]                       # (n, C, Ho, Wo, k, k)
        win = win.transpose(0, 2, 3, 1, 4, 5)                 # (n, Ho, Wo, C, k, k)
        n = imgs.shape[0]
        return win.reshape(n, self.out_height * self.out_width,
                           self.in_channels * k * k)

    def forward(self, x):
        n = x.shape[0]
        imgs = x.reshape(n, self.in_channels, self.in_height, self.in_width)
        patches = self._patches(imgs)
        Wmat = self.W.reshape(self.out_channels, -1)
        out = patches @ Wmat.T + self.b                       # (n, Ho*Wo, out_c)
        y = out.transpose(0, 2, 1).reshape(n, self.out_dim)
        return y, patches

    def backward(self, cache, dy):
        patches = cache
        n = dy.shape[0]
        k, s = self.kernel_size, self.stride
        dout = dy.reshape(n, self.out_channels, -1).transpose(0, 2, 1)  # (n, Ho*Wo, out_c)
        db = dout.sum(axis=(0, 1))
        dWmat = np.einsum("npo,npk->ok", dout, patches)
        dW = dWmat.reshape(self.W.shape)
        dpatches = dout @ self.W.reshape(self.out_channels, -1)  # (n, Ho*Wo, C*k*k)
        # scatter-add patch gradients back onto the input grid
        dimgs = np.zeros((n, self.in_channels, self.in_height, self.in_width))
        dp = dpatches.reshape(n, self.out_height, self.out_width,
                              self.in_channels, k, k)
        for di in range(k):
            for dj in range(k):
                rows = np.arange(self.out_height) * s + di
                cols = np.arange(self.out_width) * s + dj
                dimgs[:, :, rows[:, None], cols[None, :]] += \
                    dp[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        return [dW, db], dimgs.reshape(n, self.in_dim)

    def spec_dict(self):
        return {"kind": "conv2d", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size,
                "stride": self.stride, "in_height": self.in_height,
                "in_width": self.in_width}


class SpatialSoftArgmax:
    """Per-channel softmax over an activation map followed by expected pixel
    coordinates.

    Input rows are flattened (channels, H, W) maps; output rows hold
    (x, y) per channel, so 2*channels values in [0, 1]. Coordinates are pixel
    centers: x = (col + 0.5) / W, y = (row + 0.5) / H, y increasing downward,
    matching the renderer's convention.
    """

    kind = "spatial-soft-argmax"

    def __init__(self, channels: int, height: int, width: int, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if min(channels, height, width) <= 0:
            raise ValueError("spatial-soft-argmax dims must be positive")
        self.channels = channels
        self.height = height
        self.width = width
        self.temperature = float(temperature)
        cols = (np.arange(width) + 0.5) / width
        rows = (np.arange(height) + 0.5) / height
        self.px = np.tile(cols, height)                # x coordinate per flat pixel
        self.py = np.repeat(rows, width)               # y coordinate per flat pixel

    @property
    def in_dim(self):
        return self.channels * self.height * self.width

    @property
    def out_dim(self):
        return 2 * self.channels

    def check_in(self, in_dim):
        if in_dim != self.in_dim:
            raise ValueError(f"spatial-soft-argmax expects input dim {self.in_dim}, got {in_dim}")
        return self.out_dim

    def init_params(self, rng):
        pass

    def params(self):
        return []

    def forward(self, x):
        n = x.shape[0]
        a = x.reshape(n, self.channels, -1) / self.temperature
        a = a - a.max(axis=2, keepdims=True)           # shift-invariant, overflow-safe
        e = np.exp(a)
        s = e / e.sum(axis=2, keepdims=True)           # (n, C, H*W)
        ex = s @ self.px
        ey = s @ self.py
        y = np.stack([ex, ey], axis=2).reshape(n, self.out_dim)
        return y, (s, ex, ey)

    def backward(self, cache, dy):
        s, ex, ey = cache
        n = dy.shape[0]
        d = dy.reshape(n, self.channels, 2)
        dex, dey = d[:, :, 0], d[:, :, 1]
        # d(out)/d(a_q) = s_q * (coord_q - out) / T per channel
        da = s * (dex[:, :, None] * (self.px[None, None, :] - ex[:, :, None])
                  + dey[:, :, None] * (self.py[None, None, :] - ey[:, :, None]))
        da /= self.temperature
        return [], da.reshape(n, self.in_dim)

    def spec_dict(self):
        return {"kind": "spatial-soft-argmax", "channels": self.channels,
                "height": self.height, "width": self.width,
                "temperature": self.temperature}


class Relu:
    kind = "relu"

    def check_in(self, in_dim):
        return in_dim

    def init_params(self, rng):
        pass

    def params(self):
        return []

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, dy):
        return [], dy * cache

    def spec_dict(self):
        return {"kind": "relu"}


class Tanh:
    kind = "tanh"

    def check_in(self, in_dim):
        return in_dim

    def init_params(self, rng):
        pass

    def params(self):
        return []

    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, dy):
        return [], dy * (1.0 - cache * cache)

    def spec_dict(self):
        return {"kind": "tanh"}


class Sigmoid:
    kind = "sigmoid"

    def check_in(self, in_dim):
        return in_dim

    def init_params(self, rng):
        pass

    def params(self):
        return []

    def forward(self, x):
        y = sigmoid(x)
        return y, y

    def backward(self, cache, dy):
        return [], dy * cache * (1.0 - cache)

    def spec_dict(self):
        return {"kind": "sigmoid"}


def sigmoid(x):
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATIONS = {"relu": Relu, "tanh": Tanh, "sigmoid": Sigmoid}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """An ordered stack of layers with a fixed input width.

    Immutable during inference; training code mutates the parameter arrays
    returned by params() in place.
    """

    def __init__(self, layers, in_dim: int | None = None):
        if not layers:
            raise ValueError("network needs at least one layer")
        self.layers = list(layers)
        first = self.layers[0]
        if in_dim is None:
            in_dim = getattr(first, "in_dim", None)
            if in_dim is None:
                raise ValueError("in_dim required when the first layer is an activation")
        dim = in_dim
        for layer in self.layers:
            dim = layer.check_in(dim)
        self.in_dim = in_dim
        self.out_dim = dim

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init_params(rng)

    def forward(self, x, want_cache: bool = False):
        """Run the net on a batch (one sample per row) or a single 1-D sample.

        Returns the output batch, plus the per-layer activation record when
        want_cache is set (needed for backward).
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input dim {x.shape[1]} != network in_dim {self.in_dim}")
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {i} ({layer.kind})")
            caches.append(cache)
        y = x[0] if single else x
        if want_cache:
            return y, _ForwardCache(self, caches, x.shape[0], single)
        return y

    def backward(self, cache: "_ForwardCache", dy):
        """Reverse-mode pass; returns (grads parallel to params(), dLoss/dx)."""
        if cache.net is not self:
            raise ValueError("cache does not belong to this network")
        dy = np.asarray(dy, dtype=float)
        if cache.single and dy.ndim == 1:
            dy = dy[None, :]
        if dy.shape != (cache.n, self.out_dim):
            raise ValueError(f"upstream gradient shape {dy.shape} != ({cache.n}, {self.out_dim})")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            pgrads, dy = self.layers[i].backward(cache.caches[i], dy)
            grads[i] = pgrads
        flat = []
        for g in grads:
            flat.extend(g)
        dx = dy[0] if cache.single else dy
        return flat, dx

    def jacobian(self, x) -> np.ndarray:
        """d(output)/d(input) at a single sample: one backward per output row."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("jacobian expects a single flat sample")
        _, cache = self.forward(x, want_cache=True)
        J = np.empty((self.out_dim, self.in_dim))
        for k in range(self.out_dim):
            seed = np.zeros(self.out_dim)
            seed[k] = 1.0
            _, dx = self.backward(cache, seed)
            J[k] = dx
        return J

    # -- serialization ------------------------------------------------------

    FORMAT = "lsbmp-net-v1"

    def to_json_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = layer.spec_dict()
            ps = layer.params()
            if ps:
                d["W"] = ps[0].ravel().tolist()
                d["b"] = ps[1].ravel().tolist()
            layers.append(d)
        return {"format": self.FORMAT, "in_dim": self.in_dim, "layers": layers}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Network":
        if doc.get("format") != cls.FORMAT:
            raise ValueError(f"unsupported network format: {doc.get('format')!r}")
        layers = []
        for d in doc["layers"]:
            kind = d["kind"]
            if kind == "dense":
                W = np.asarray(d["W"], dtype=float).reshape(d["in_dim"], d["out_dim"])
                layers.append(Dense(d["in_dim"], d["out_dim"], W=W,
                                    b=np.asarray(d["b"], dtype=float)))
            elif kind == "conv2d":
                layers.append(Conv2D(d["in_channels"], d["out_channels"],
                                     d["kernel_size"], d["stride"],
                                     d["in_height"], d["in_width"],
                                     W=np.asarray(d["W"], dtype=float),
                                     b=np.asarray(d["b"], dtype=float)))
            elif kind == "spatial-soft-argmax":
                layers.append(SpatialSoftArgmax(d["channels"], d["height"],
                                                d["width"], d["temperature"]))
            elif kind in _ACTIVATIONS:
                layers.append(_ACTIVATIONS[kind]())
            else:
                raise ValueError(f"unknown layer kind: {kind!r}")
        return cls(layers, in_dim=doc.get("in_dim"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "Network":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


class _ForwardCache:
    __slots__ = ("net", "caches", "n", "single")

    def __init__(self, net, caches, n, single):
        self.net = net
        self.caches = caches
        self.n = n
        self.single = single


def mlp(dims, hidden="tanh", output=None, rng: np.random.Generator | None = None) -> Network:
    """Fully connected stack: dims [d0, d1, ..., dk] with an activation after
    every layer but the last, and an optional output activation."""
    layers = []
    for i in range(len(dims) - 1):
        layers.append(Dense(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(_ACTIVATIONS[hidden]())
    if output is not None:
        layers.append(_ACTIVATIONS[output]())
    net = Network(layers)
    if rng is not None:
        net.init_params(rng)
    return net


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """Moment estimates for one parameter list; step_count starts at 0."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(params, grads, state: AdamState):
    """Standard Adam update with bias correction, mutating params in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads/state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape does not match parameter shape")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
