"""Numpy layers with explicit backward passes.

Activations use the layout (batch, channels, x, y, z). Every layer caches
what its backward pass needs during ``forward`` and accumulates parameter
gradients into ``self.grads``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def out_shape(self, shape):
        return shape


class Conv3D(Layer):
    """Cubic-kernel 3D convolution, stride 1.

    Zero padding of ``kernel // 2`` is applied along x and y only, so the
    lateral size is kept while z shrinks by ``kernel - 1``. With
    ``bias=False`` the layer has no offset; a batch norm downstream would
    cancel it anyway.
    """

    def __init__(self, c_in, c_out, kernel=3, rng=None, dtype=np.float64, bias=True):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        self.pad = kernel // 2
        fan_in = c_in * kernel ** 3
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel, kernel))
        self.params = {"W": w.astype(dtype)}
        if bias:
            self.params["b"] = np.zeros(c_out, dtype=dtype)

    def out_shape(self, shape):
        c, x, y, z = shape
        p, k = self.pad, self.k
        return (self.c_out, x + 2 * p - k + 1, y + 2 * p - k + 1, z - k + 1)

    def forward(self, x, train=False):
        p, k = self.pad, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
        b, c, ox, oy, oz = win.shape[:5]
        cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b * ox * oy * oz, c * k ** 3)
        wmat = self.params["W"].reshape(self.c_out, -1)
        out = cols @ wmat.T
        if "b" in self.params:
            out += self.params["b"]
        self._cache = (cols, xp.shape, (b, ox, oy, oz))
        return out.reshape(b, ox, oy, oz, self.c_out).transpose(0, 4, 1, 2, 3)

    def backward(self, dout):
        cols, xp_shape, (b, ox, oy, oz) = self._cache
        k, p = self.k, self.pad
        d2 = dout.transpose(0, 2, 3, 4, 1).reshape(-1, self.c_out)
        wmat = self.params["W"].reshape(self.c_out, -1)
        self.grads["W"] = (d2.T @ cols).reshape(self.params["W"].shape)
        if "b" in self.params:
            self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ wmat).reshape(b, ox, oy, oz, self.c_in, k, k, k)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                for m in range(k):
                    dxp[:, :, i:i + ox, j:j + oy, m:m + oz] += \
                        dcols[..., i, j, m].transpose(0, 4, 1, 2, 3)
        if p:
            dxp = dxp[:, :, p:-p, p:-p, :]
        return dxp


class MaxPool3D(Layer):
    """Non-overlapping max pooling; trailing cells that do not fill a window are dropped."""

    def __init__(self, size=2):
        super().__init__()
        self.s = size

    def out_shape(self, shape):
        c, x, y, z = shape
        return (c, x // self.s, y // self.s, z // self.s)

    def forward(self, x, train=False):
        s = self.s
        b, c, nx, ny, nz = x.shape
        ox, oy, oz = nx // s, ny // s, nz // s
        xc = x[:, :, : ox * s, : oy * s, : oz * s]
        blocks = xc.reshape(b, c, ox, s, oy, s, oz, s).transpose(0, 1, 2, 4, 6, 3, 5, 7)
        blocks = blocks.reshape(b, c, ox, oy, oz, s ** 3)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, arg = self._cache
        s = self.s
        b, c, ox, oy, oz = dout.shape
        blocks = np.zeros((b, c, ox, oy, oz, s ** 3), dtype=dout.dtype)
        np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(b, c, ox, oy, oz, s, s, s).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, : ox * s, : oy * s, : oz * s] = blocks.reshape(b, c, ox * s, oy * s, oz * s)
        return dx


class BatchNorm3D(Layer):
    """Per-channel batch normalization.

    Training mode normalizes with the batch statistics. Inference mode uses
    population statistics, which the trainer recomputes over the whole
    training set after every epoch.
    """

    def __init__(self, channels, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.params = {"gamma": np.ones(channels, dtype=dtype), "beta": np.zeros(channels, dtype=dtype)}
        self.pop_mean = np.zeros(channels, dtype=dtype)
        self.pop_var = np.ones(channels, dtype=dtype)

    @staticmethod
    def _bc(v):
        return v[None, :, None, None, None]

    def forward(self, x, train=False):
        g, bt = self._bc(self.params["gamma"]), self._bc(self.params["beta"])
        if not train:
            return g * (x - self._bc(self.pop_mean)) / np.sqrt(self._bc(self.pop_var) + self.eps) + bt
        axes = (0, 2, 3, 4)
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mu)) * self._bc(inv)
        self._cache = (xhat, inv)
        return g * xhat + bt

    def backward(self, dout):
        xhat, inv = self._cache
        axes = (0, 2, 3, 4)
        m = dout.size / dout.shape[1]
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self._bc(self.params["gamma"])
        return self._bc(inv / m) * (
            m * dxhat - self._bc(dxhat.sum(axis=axes)) - xhat * self._bc((dxhat * xhat).sum(axis=axes)))

    def set_population(self, x):
        axes = (0, 2, 3, 4)
        self.pop_mean = x.mean(axis=axes).astype(self.pop_mean.dtype)
        self.pop_var = x.var(axis=axes).astype(self.pop_var.dtype)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return dout * self._mask


class Dense(Layer):
    """Kernel-size-1 1D convolution over a length-1 sequence, i.e. an affine map."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64, gain=2.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = rng.normal(0.0, np.sqrt(gain / n_in), size=(n_in, n_out))
        self.params = {"W": w.astype(dtype), "b": np.zeros(n_out, dtype=dtype)}

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T
