"""Minimal numpy compute core: layers, the 1-conv/3-dense backbone, SGD.

Tensors are plain ``float64`` numpy arrays. Every layer op accepts either a
single example or a leading batch axis; backward ops return the input
gradient and accumulate parameter gradients in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


def as_tensor(x, name="tensor"):
    """Convert to a finite float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(eq=False)
class Param:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_tensor(self.value, self.name or "param")
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def _batched(x, ndim):
    """Return (x with a batch axis, whether one was added)."""
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ShapeError(f"expected {ndim}-d input or batch of them, got shape {x.shape}")


# -- layers -----------------------------------------------------------------

def conv3x3_forward(x, kernels: Param, bias: Param):
    """Valid 3x3 cross-correlation, stride 1, plus per-channel bias.

    ``x`` is [C_in, H, W] or [N, C_in, H, W]; kernels are [C_out, C_in, 3, 3].
    """
    xb, single = _batched(np.asarray(x, dtype=np.float64), 3)
    k = kernels.value
    if k.ndim != 4 or k.shape[2:] != (3, 3):
        raise ShapeError(f"kernel bank must be [C_out, C_in, 3, 3], got {k.shape}")
    if xb.shape[1] != k.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernels expect {k.shape[1]}")
    if xb.shape[2] < 3 or xb.shape[3] < 3:
        raise ShapeError(f"input spatial size {xb.shape[2:]} smaller than 3x3")
    if bias.shape != (k.shape[0],):
        raise ShapeError(f"conv bias must be [{k.shape[0]}], got {bias.shape}")
    win = sliding_window_view(xb, (3, 3), axis=(2, 3))  # N, C, H-2, W-2, 3, 3
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # N, H-2, W-2, C_out
    out = out.transpose(0, 3, 1, 2) + bias.value[None, :, None, None]
    return out[0] if single else out


def conv3x3_backward(x, kernels: Param, bias: Param, grad_out):
    xb, single = _batched(np.asarray(x, dtype=np.float64), 3)
    gb = grad_out[None] if single else grad_out
    h, w = gb.shape[2], gb.shape[3]
    if gb.shape[:2] != (xb.shape[0], kernels.shape[0]) or (h, w) != (xb.shape[2] - 2, xb.shape[3] - 2):
        raise ShapeError(f"conv grad shape {grad_out.shape} does not match input {x.shape}")
    win = sliding_window_view(xb, (3, 3), axis=(2, 3))
    kernels.grad += np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))
    bias.grad += gb.sum(axis=(0, 2, 3))
    dx = np.zeros_like(xb)
    k = kernels.value
    for i in range(3):
        for j in range(3):
            dx[:, :, i:i + h, j:j + w] += np.einsum("nohw,oc->nchw", gb, k[:, :, i, j])
    return dx[0] if single else dx


def dense_forward(x, weight: Param, bias: Param):
    """``weight @ x + bias`` for x of shape [n] or [N, n]."""
    x = np.asarray(x, dtype=np.float64)
    m, n = weight.shape
    if x.shape[-1:] != (n,) or x.ndim > 2:
        raise ShapeError(f"dense layer expects input width {n}, got shape {x.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"dense bias must be [{m}], got {bias.shape}")
    return x @ weight.value.T + bias.value


def dense_backward(x, weight: Param, bias: Param, grad_out):
    x = np.asarray(x, dtype=np.float64)
    if grad_out.shape[:-1] != x.shape[:-1] or grad_out.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense grad shape {grad_out.shape} does not match input {x.shape}")
    if x.ndim == 1:
        weight.grad += np.outer(grad_out, x)
        bias.grad += grad_out
    else:
        weight.grad += grad_out.T @ x
        bias.grad += grad_out.sum(axis=0)
    return grad_out @ weight.value


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(pre, grad_out):
    return grad_out * (pre > 0)


# -- backbone ---------------------------------------------------------------

@dataclass
class ForwardTrace:
    x: np.ndarray
    conv_pre: np.ndarray
    flat: np.ndarray
    h1_pre: np.ndarray
    h1: np.ndarray
    h2_pre: np.ndarray
    h2: np.ndarray
    single: bool


class Backbone:
    """conv3x3 -> ReLU -> flatten -> dense -> ReLU -> dense -> ReLU -> dense.

    The last dense layer's output is the embedding compared by the energy
    function.
    """

    def __init__(self, input_shape=(1, 16, 16), conv_channels=4, hidden=(64, 64),
                 embedding_dim=70, seed=0, rng=None):
        c, h, w = (int(s) for s in input_shape)
        if h < 3 or w < 3 or c < 1:
            raise ShapeError(f"input shape {input_shape} too small for a 3x3 convolution")
        if embedding_dim < 1 or conv_channels < 1 or min(hidden) < 1:
            raise ValueError("layer widths must be positive")
        self.input_shape = (c, h, w)
        self.conv_channels = int(conv_channels)
        self.hidden = tuple(int(v) for v in hidden)
        self.embedding_dim = int(embedding_dim)
        self.seed = int(seed)
        rng = np.random.default_rng(seed) if rng is None else rng

        flat = conv_channels * (h - 2) * (w - 2)
        shapes = [
            ("conv_w", (conv_channels, c, 3, 3), c * 9),
            ("conv_b", (conv_channels,), c * 9),
            ("dense1_w", (self.hidden[0], flat), flat),
            ("dense1_b", (self.hidden[0],), flat),
            ("dense2_w", (self.hidden[1], self.hidden[0]), self.hidden[0]),
            ("dense2_b", (self.hidden[1],), self.hidden[0]),
            ("dense3_w", (embedding_dim, self.hidden[1]), self.hidden[1]),
            ("dense3_b", (embedding_dim,), self.hidden[1]),
        ]
        for name, shape, fan_in in shapes:
            bound = 1.0 / np.sqrt(fan_in)
            setattr(self, name, Param(rng.uniform(-bound, bound, size=shape), name=name))

    def params(self):
        return [self.conv_w, self.conv_b, self.dense1_w, self.dense1_b,
                self.dense2_w, self.dense2_b, self.dense3_w, self.dense3_b]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x):
        """Embed one input [C,H,W] or a batch [N,C,H,W]; returns (embedding, trace)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-3:] != self.input_shape or x.ndim not in (3, 4):
            raise ShapeError(f"backbone expects input {self.input_shape}, got {x.shape}")
        xb, single = _batched(x, 3)
        conv_pre = conv3x3_forward(xb, self.conv_w, self.conv_b)
        flat = relu_forward(conv_pre).reshape(len(xb), -1)
        h1_pre = dense_forward(flat, self.dense1_w, self.dense1_b)
        h1 = relu_forward(h1_pre)
        h2_pre = dense_forward(h1, self.dense2_w, self.dense2_b)
        h2 = relu_forward(h2_pre)
        emb = dense_forward(h2, self.dense3_w, self.dense3_b)
        trace = ForwardTrace(xb, conv_pre, flat, h1_pre, h1, h2_pre, h2, single)
        return (emb[0] if single else emb), trace

    def backward(self, trace: ForwardTrace, grad_out):
        """Accumulate parameter grads of ``sum(embedding * grad_out)``; return input grad."""
        g = np.asarray(grad_out, dtype=np.float64)
        g = g[None] if trace.single and g.ndim == 1 else g
        if g.shape != (len(trace.x), self.embedding_dim):
            raise ShapeError(f"grad_out shape {np.shape(grad_out)} does not match the traced embedding")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("upstream gradient is not finite")
        g = dense_backward(trace.h2, self.dense3_w, self.dense3_b, g)
        g = relu_backward(trace.h2_pre, g)
        g = dense_backward(trace.h1, self.dense2_w, self.dense2_b, g)
        g = relu_backward(trace.h1_pre, g)
        g = dense_backward(trace.flat, self.dense1_w, self.dense1_b, g)
        g = relu_backward(trace.conv_pre, g.reshape(trace.conv_pre.shape))
        dx = conv3x3_backward(trace.x, self.conv_w, self.conv_b, g)
        return dx[0] if trace.single else dx


def backbone_forward(backbone: Backbone, x):
    return backbone.forward(x)


def backbone_backward(backbone: Backbone, trace: ForwardTrace, grad_out):
    return backbone.backward(trace, grad_out)


def sgd_step(params, learning_rate):
    """Plain SGD; zeroes gradients afterwards."""
    if not learning_rate > 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}; aborting")
    for p in params:
        p.value -= learning_rate * p.grad
        p.zero_grad()
