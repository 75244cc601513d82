"""Dense tanh MLP with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector, layer by layer:
``W1, b1, W2, b2, ..., WL, bL`` where ``Wi`` has shape ``(dims[i], dims[i+1])``
stored row-major. Hidden layers use tanh, the output layer is affine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


def num_params(layer_dims) -> int:
    return int(sum((a + 1) * b for a, b in zip(layer_dims[:-1], layer_dims[1:])))


@dataclass(frozen=True)
class Mlp:
    layer_dims: tuple
    params: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {dims}")
        params = np.ascontiguousarray(self.params, dtype=np.float64)
        if params.shape != (num_params(dims),):
            raise ValueError(
                f"expected {num_params(dims)} parameters for dims {dims}, "
                f"got shape {params.shape}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "params", params)

    @classmethod
    def zeros(cls, layer_dims) -> "Mlp":
        return cls(tuple(layer_dims), np.zeros(num_params(layer_dims)))

    @classmethod
    def random(cls, layer_dims, rng, std=1.0) -> "Mlp":
        return cls(tuple(layer_dims), std * rng.standard_normal(num_params(layer_dims)))

    def unflatten(self):
        """List of ``(W, b)`` views into ``params``."""
        return unflatten(self.params, self.layer_dims)


def unflatten(params, layer_dims):
    out = []
    off = 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        W = params[off:off + a * b].reshape(a, b)
        off += a * b
        out.append((W, params[off:off + b]))
        off += b
    return out


def _check_input(net: Mlp, x, size, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (size,):
        raise ValueError(f"{what} must have shape ({size},), got {x.shape}")
    return x


def forward(net: Mlp, x) -> np.ndarray:
    x = _check_input(net, x, net.layer_dims[0], "input")
    dims = np.asarray(net.layer_dims, dtype=np.int64)
    return forward_batch(net.params, dims, x[None, :])[0]


def grad_params(net: Mlp, x, cotangent) -> np.ndarray:
    """Vector-Jacobian product ``cotangent^T d forward(x) / d params``."""
    x = _check_input(net, x, net.layer_dims[0], "input")
    c = _check_input(net, cotangent, net.layer_dims[-1], "cotangent")
    dims = np.asarray(net.layer_dims, dtype=np.int64)
    return vjp_batch(net.params, dims, x[None, :], c[None, :])


@njit(cache=True)
def forward_batch(params, dims, X):
    """Rows of ``X`` through the network; returns ``(len(X), dims[-1])``."""
    h = X
    off = 0
    nl = dims.shape[0] - 1
    for i in range(nl):
        a = dims[i]
        b = dims[i + 1]
        W = params[off:off + a * b].reshape((a, b))
        off += a * b
        bias = params[off:off + b]
        off += b
        z = np.dot(h, W) + bias
        if i < nl - 1:
            h = np.tanh(z)
        else:
            h = z
    return h


@njit(cache=True)
def vjp_batch(params, dims, X, C):
    """Sum over rows of the parameter VJP with per-row cotangents ``C``."""
    nl = dims.shape[0] - 1
    offs = np.zeros(nl + 1, dtype=np.int64)
    for i in range(nl):
        offs[i + 1] = offs[i] + (dims[i] + 1) * dims[i + 1]
    # forward pass, keeping layer inputs
    acts = [X]
    h = X
    for i in range(nl):
        a = dims[i]
        b = dims[i + 1]
        W = params[offs[i]:offs[i] + a * b].reshape((a, b))
        bias = params[offs[i] + a * b:offs[i + 1]]
        z = np.dot(h, W) + bias
        if i < nl - 1:
            h = np.tanh(z)
            acts.append(h)
    grad = np.zeros(params.shape[0])
    delta = np.ascontiguousarray(C)
    for i in range(nl - 1, -1, -1):
        a = dims[i]
        b = dims[i + 1]
        hin = acts[i]
        gW = np.dot(hin.T, delta)
        grad[offs[i]:offs[i] + a * b] = gW.ravel()
        grad[offs[i] + a * b:offs[i + 1]] = delta.sum(axis=0)
        if i > 0:
            W = params[offs[i]:offs[i] + a * b].reshape((a, b))
            delta = np.dot(delta, W.T) * (1.0 - hin * hin)
    return grad
