"""Differentiable building blocks with handwritten backward passes.

Everything runs in float64 so that central finite differences at eps=1e-5
can confirm gradients to a 1e-4 relative tolerance.  Layers keep their
parameters and gradient buffers in ``params``/``grads`` dicts of identical
shapes; ``forward`` caches what ``backward`` needs and ``backward``
accumulates into ``grads`` (call ``zero_grad`` between steps).
"""

from __future__ import annotations

import numpy as np


def _init_matrix(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    scale = 1.0 / np.sqrt(n_in)
    return rng.uniform(-scale, scale, size=(n_in, n_out))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class Layer:
    """Base: parameter/gradient registry shared by all blocks."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


class Dense(Layer):
    """Affine map y = x W + b over a batch of row vectors."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self._add_param("W", _init_matrix(rng, n_in, n_out))
        self._add_param("b", np.zeros(n_out))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"dense expects (N, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = np.asarray(dy, dtype=np.float64)
        self.grads["W"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T

    # cache-free variants for layers reused many times per backward pass
    # (recurrent unrolls keep the inputs themselves)
    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.params["W"] + self.params["b"]

    def apply_backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        self.grads["W"] += x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, 0.0)


class GatedRecurrentCell(Layer):
    """Two-gate recurrent cell (update + reset gates, tanh candidate).

    With h_0 = 0 the state stays strictly inside (-1, 1): each step is a
    convex combination of the previous state and a tanh output.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_hidden = n_in, n_hidden
        for gate in ("z", "r", "h"):
            self._add_param(f"W{gate}", _init_matrix(rng, n_in, n_hidden))
            self._add_param(f"U{gate}", _init_matrix(rng, n_hidden, n_hidden))
            self._add_param(f"b{gate}", np.zeros(n_hidden))

    def initial_state(self, batch: int = 1) -> np.ndarray:
        return np.zeros((batch, self.n_hidden))

    def step(self, x: np.ndarray, h_prev: np.ndarray):
        """One recurrence step; returns (h, cache) with cache for step_backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"cell expects (N, {self.n_in}), got {x.shape}")
        if h_prev.shape != (x.shape[0], self.n_hidden):
            raise ValueError(f"state shape {h_prev.shape} does not match input batch")
        p = self.params
        z = sigmoid(x @ p["Wz"] + h_prev @ p["Uz"] + p["bz"])
        r = sigmoid(x @ p["Wr"] + h_prev @ p["Ur"] + p["br"])
        rh = r * h_prev
        c = np.tanh(x @ p["Wh"] + rh @ p["Uh"] + p["bh"])
        h = (1.0 - z) * h_prev + z * c
        return h, (x, h_prev, z, r, rh, c)

    def step_backward(self, cache, dh: np.ndarray):
        """Backprop one step: returns (dx, dh_prev), accumulating param grads."""
        x, h_prev, z, r, rh, c = cache
        p, g = self.params, self.grads
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dc_pre = dc * (1.0 - c * c)
        g["Wh"] += x.T @ dc_pre
        g["Uh"] += rh.T @ dc_pre
        g["bh"] += dc_pre.sum(axis=0)
        dx = dc_pre @ p["Wh"].T
        drh = dc_pre @ p["Uh"].T
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        g["Wz"] += x.T @ dz_pre
        g["Uz"] += h_prev.T @ dz_pre
        g["bz"] += dz_pre.sum(axis=0)
        dx += dz_pre @ p["Wz"].T
        dh_prev += dz_pre @ p["Uz"].T

        dr_pre = dr * r * (1.0 - r)
        g["Wr"] += x.T @ dr_pre
        g["Ur"] += h_prev.T @ dr_pre
        g["br"] += dr_pre.sum(axis=0)
        dx += dr_pre @ p["Wr"].T
        dh_prev += dr_pre @ p["Ur"].T
        return dx, dh_prev


class DilatedConv1d(Layer):
    """Length-preserving 1-D convolution over (time, channels) with dilation.

    Kernel width must be odd; the input is zero-padded so the output covers
    the same frames.  Frame t of the output depends only on input frames
    t + (k - w//2) * dilation for k in [0, w).
    """

    def __init__(self, n_in: int, n_out: int, width: int, dilation: int,
                 rng: np.random.Generator):
        super().__init__()
        if width % 2 != 1:
            raise ValueError(f"kernel width must be odd, got {width}")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        self.n_in, self.n_out = n_in, n_out
        self.width, self.dilation = width, dilation
        scale = 1.0 / np.sqrt(n_in * width)
        self._add_param("W", rng.uniform(-scale, scale, size=(width, n_in, n_out)))
        self._add_param("b", np.zeros(n_out))
        self._xpad = None
        self._T = 0

    @property
    def radius(self) -> int:
        """Frames of context used on each side."""
        return (self.width // 2) * self.dilation

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"conv expects (T, {self.n_in}), got {x.shape}")
        T = x.shape[0]
        pad = self.radius
        xpad = np.zeros((T + 2 * pad, self.n_in))
        xpad[pad:pad + T] = x
        self._xpad, self._T = xpad, T
        y = np.tile(self.params["b"], (T, 1))
        for k in range(self.width):
            off = k * self.dilation
            y += xpad[off:off + T] @ self.params["W"][k]
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = np.asarray(dy, dtype=np.float64)
        T, pad = self._T, self.radius
        dxpad = np.zeros_like(self._xpad)
        for k in range(self.width):
            off = k * self.dilation
            self.grads["W"][k] += self._xpad[off:off + T].T @ dy
            dxpad[off:off + T] += dy @ self.params["W"][k].T
        self.grads["b"] += dy.sum(axis=0)
        return dxpad[pad:pad + T]


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-scaling dropout mask: Bernoulli(1-rate) / (1-rate).

    Deterministic given the generator state; expected value 1 elementwise.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)
