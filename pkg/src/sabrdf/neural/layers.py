"""Layer set with hand-written backward passes. Tensors are NCHW (or NC)."""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Layer:
    """Base class.

    ``forward`` receives a list of input arrays and returns one array;
    ``backward`` receives the upstream gradient and returns a list of input
    gradients, accumulating parameter gradients into ``self.grads``.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    n_inputs = 1

    def forward(self, inputs: list[np.ndarray], train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        self.zero_grad()
        self._cache = None

    def config(self) -> dict:
        return {}

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache


def _he_uniform(rng, fan_in, shape, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2D(Layer):
    """Stride-1 convolution with odd square kernels and same padding.

    ``bias=False`` is for convolutions feeding batch normalization, which
    cancels a per-channel bias exactly.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, rng=None, dtype=np.float32, bias: bool = True):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.in_channels, self.out_channels, self.kernel, self.bias = in_channels, out_channels, kernel, bias
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.params = {"weight": _he_uniform(rng, fan_in, (out_channels, in_channels, kernel, kernel), dtype)}
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "kernel": self.kernel, "bias": self.bias}

    def _im2col(self, x):
        """``(C*k*k, N*H*W)`` column matrix of zero-padded shifted copies."""
        n, c, h, w = x.shape
        k, p = self.kernel, self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = np.empty((c, k * k, n, h, w), dtype=x.dtype)
        xt = xp.transpose(1, 0, 2, 3)
        for i in range(k):
            for j in range(k):
                cols[:, i * k + j] = xt[:, :, i : i + h, j : j + w]
        return cols.reshape(c * k * k, n * h * w)

    def forward(self, inputs, train):
        (x,) = inputs
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2D expects (N, {self.in_channels}, H, W), got {x.shape}")
        n, _, h, w = x.shape
        cols = self._im2col(x)
        out = self.params["weight"].reshape(self.out_channels, -1) @ cols
        if self.bias:
            out += self.params["bias"][:, None]
        self._cache = (x.shape, cols)
        return out.reshape(self.out_channels, n, h, w).transpose(1, 0, 2, 3)

    def backward(self, grad):
        (n, c, h, w), cols = self._need_cache()
        k, p = self.kernel, self.kernel // 2
        g2 = grad.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        self.grads["weight"] += (g2 @ cols.T).reshape(self.params["weight"].shape)
        if self.bias:
            self.grads["bias"] += g2.sum(axis=1)
        dcols = (self.params["weight"].reshape(self.out_channels, -1).T @ g2).reshape(c, k * k, n, h, w)
        dxp = np.zeros((c, n, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += dcols[:, i * k + j]
        return [dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)]


class MaxPool(Layer):
    """Non-overlapping ``size x size`` max pooling (stride = size)."""

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def config(self):
        return {"size": self.size}

    def forward(self, inputs, train):
        (x,) = inputs
        if x.ndim != 4 or x.shape[2] % self.size or x.shape[3] % self.size:
            raise ShapeError(f"MaxPool({self.size}) needs NCHW with dims divisible by {self.size}, got {x.shape}")
        s = self.size
        out = None
        idx = None
        # Scan window offsets in order; strict ">" keeps the first maximum on ties.
        for k in range(s * s):
            cand = x[:, :, k // s :: s, k % s :: s]
            if out is None:
                out = cand.copy()
                idx = np.zeros(cand.shape, dtype=np.int8)
            else:
                better = cand > out
                out[better] = cand[better]
                idx[better] = k
        self._cache = (x.shape, idx)
        return out

    def backward(self, grad):
        shape, idx = self._need_cache()
        s = self.size
        dx = np.zeros(shape, dtype=grad.dtype)
        for k in range(s * s):
            dx[:, :, k // s :: s, k % s :: s] = np.where(idx == k, grad, 0)
        return [dx]


class FullyConnected(Layer):
    """Dense layer; inputs with more than two dims are flattened per sample."""

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": _he_uniform(rng, in_features, (in_features, out_features), dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }
        self.zero_grad()

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, inputs, train):
        (x,) = inputs
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ShapeError(f"FullyConnected expects {self.in_features} features, got {flat.shape[1]} from {x.shape}")
        self._cache = (x.shape, flat)
        return flat @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        shape, flat = self._need_cache()
        self.grads["weight"] += flat.T @ grad
        self.grads["bias"] += grad.sum(axis=0)
        return [(grad @ self.params["weight"].T).reshape(shape)]


class BatchNorm(Layer):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params = {"gamma": np.ones(channels, dtype=dtype), "beta": np.zeros(channels, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(channels, dtype=dtype), "running_var": np.ones(channels, dtype=dtype)}
        self.zero_grad()

    def config(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def _axes(self, x):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm expects (N, {self.channels}[, H, W]), got {x.shape}")
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, ndim):
        return v if ndim == 2 else v[None, :, None, None]

    def forward(self, inputs, train):
        (x,) = inputs
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            count = x.size // self.channels
            unbiased = var * count / max(count - 1, 1)
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * unbiased).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x.ndim)) * self._bcast(inv, x.ndim)
        self._cache = (xhat, inv, axes, train)
        return self._bcast(self.params["gamma"], x.ndim) * xhat + self._bcast(self.params["beta"], x.ndim)

    def backward(self, grad):
        xhat, inv, axes, train = self._need_cache()
        nd = grad.ndim
        self.grads["gamma"] += (grad * xhat).sum(axis=axes)
        self.grads["beta"] += grad.sum(axis=axes)
        g = grad * self._bcast(self.params["gamma"], nd)
        if not train:
            return [g * self._bcast(inv, nd)]
        m = grad.size // self.channels
        mean_g = g.sum(axis=axes) / m
        mean_gx = (g * xhat).sum(axis=axes) / m
        dx = self._bcast(inv, nd) * (g - self._bcast(mean_g, nd) - xhat * self._bcast(mean_gx, nd))
        return [dx]


class ReLU(Layer):
    def forward(self, inputs, train):
        (x,) = inputs
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return [grad * self._need_cache()]


class Sigmoid(Layer):
    def forward(self, inputs, train):
        (x,) = inputs
        # exp of the negative magnitude only, to avoid overflow.
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._need_cache()
        return [grad * y * (1 - y)]


def _bilinear_matrix(n: int, dtype) -> np.ndarray:
    """``(2n, n)`` matrix of x2 bilinear upsampling with half-pixel centres and edge clamping."""
    out = np.zeros((2 * n, n), dtype=dtype)
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    rows = np.arange(2 * n)
    np.add.at(out, (rows, lo), 1 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


class BilinearUpsample(Layer):
    """x2 bilinear upsampling applied as separable linear maps."""

    def forward(self, inputs, train):
        (x,) = inputs
        if x.ndim != 4:
            raise ShapeError(f"BilinearUpsample expects NCHW, got {x.shape}")
        ah = _bilinear_matrix(x.shape[2], x.dtype)
        aw = _bilinear_matrix(x.shape[3], x.dtype)
        self._cache = (ah, aw)
        return np.einsum("ih,nchw,jw->ncij", ah, x, aw, optimize=True)

    def backward(self, grad):
        ah, aw = self._need_cache()
        return [np.einsum("ih,ncij,jw->nchw", ah, grad, aw, optimize=True)]


class Concat(Layer):
    """Channel-axis concatenation of any number of inputs with equal N, H, W."""

    n_inputs = -1

    def forward(self, inputs, train):
        ref = inputs[0].shape
        for x in inputs[1:]:
            if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
                raise ShapeError(f"Concat inputs disagree: {[i.shape for i in inputs]}")
        self._cache = [x.shape[1] for x in inputs]
        return np.concatenate(inputs, axis=1)

    def backward(self, grad):
        sizes = self._need_cache()
        return np.split(grad, np.cumsum(sizes)[:-1], axis=1)


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, MaxPool, FullyConnected, BatchNorm, ReLU, Sigmoid, BilinearUpsample, Concat)}
