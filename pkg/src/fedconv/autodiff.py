"""Reverse-mode automatic differentiation over numpy arrays.

Implements exactly the tensor operations the CNN variants in this package
need: grouped/depth-wise convolution, affine maps, pooling, channel layer
normalization, batch normalization, a family of elementwise activations,
and softmax cross-entropy.

Every operation returns a ``Tensor`` that remembers its parent tensors and a
closure computing parent gradients. ``Tensor.backward()`` walks the graph in
reverse topological order and accumulates gradients additively, so a value
consumed twice receives the sum of both contributions.

Graphs are single-threaded per model instance; independent instances share
no mutable state and may be driven from different threads.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

__all__ = [
    "Tensor",
    "NumericsError",
    "ShapeError",
    "no_grad",
    "add",
    "weighted_sum",
    "conv2d",
    "linear",
    "maxpool2d",
    "global_avg_pool",
    "layer_norm_c",
    "batch_norm",
    "relu",
    "leaky_relu",
    "prelu",
    "softplus",
    "gelu",
    "silu",
    "elu",
    "activation",
    "softmax_cross_entropy",
    "ACTIVATION_KINDS",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ACTIVATION_KINDS = ("relu", "lrelu", "prelu", "softplus", "gelu", "silu", "elu")


class NumericsError(RuntimeError):
    """A forward pass produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or parameters."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (eval passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _finite_or_raise(data: np.ndarray, op: str) -> None:
    # NaN and +/-Inf both poison a sum, so a single reduction covers the check.
    if not np.isfinite(np.sum(data)):
        raise NumericsError(f"non-finite values produced by node '{op}'")


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


class Tensor:
    """Dense n-d array with an optional gradient buffer and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate grads of every reachable tensor, starting from a scalar."""
        if self.data.size != 1:
            raise ShapeError("backward() expects a scalar loss")
        # Iterative post-order DFS; creation order already respects topology,
        # but DFS keeps the traversal local to this loss.
        topo: list[Tensor] = []
        visited = {id(self)}
        stack: list[tuple[Tensor, int]] = [(self, 0)]
        while stack:
            node, idx = stack.pop()
            while idx < len(node._parents):
                parent = node._parents[idx]
                idx += 1
                if parent.requires_grad and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((node, idx))
                    stack.append((parent, 0))
                    break
            else:
                topo.append(node)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, op={self.op!r})"


def _result(out_data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> tuple[Tensor, bool]:
    """Wrap op output; returns (tensor, needs_backward_closure)."""
    _finite_or_raise(out_data, op)
    out = Tensor(out_data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        return out, True
    return out, False


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out, track = _result(a.data + b.data, (a, b), "add")
    if track:
        def _bwd():
            if a.requires_grad:
                _accum(a, out.grad)
            if b.requires_grad:
                _accum(b, out.grad)
        out._backward = _bwd
    return out


def weighted_sum(t: Tensor, coeffs: np.ndarray) -> Tensor:
    """Scalar projection sum(t * coeffs); used to scalarize outputs in checks."""
    c = np.asarray(coeffs, dtype=t.data.dtype)
    if c.shape != t.shape:
        raise ShapeError("weighted_sum: coefficient shape mismatch")
    out, track = _result(np.sum(t.data * c), (t,), "weighted_sum")
    if track:
        def _bwd():
            _accum(t, c * out.grad)
        out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# convolution / affine
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding and grouped channels.

    ``groups == Cin == Cout`` gives depth-wise convolution. Forward is im2col
    plus one batched matmul per call; backward scatters window gradients back
    with a k*k loop of strided adds.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIHW weight")
    n, cin, h, w = xd.shape
    cout, cin_g, kh, kw = wd.shape
    if kh != kw:
        raise ShapeError("conv2d supports square kernels only")
    k = kh
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError("conv2d: k >= 1, stride >= 1, padding >= 0 required")
    if cin % groups != 0 or cout % groups != 0:
        raise ShapeError(f"conv2d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight expects Cin/groups={cin // groups}, got {cin_g}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError("conv2d: bias must have shape (Cout,)")
    hout = (h + 2 * padding - k) // stride + 1
    wout = (w + 2 * padding - k) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError("conv2d: kernel larger than padded input")

    p = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(
        n, groups, cin_g * k * k, hout * wout)
    wm = wd.reshape(groups, cout // groups, cin_g * k * k)
    out_data = np.matmul(wm, cols).reshape(n, cout, hout, wout)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    out, track = _result(out_data, parents, "conv2d")
    if track:
        def _bwd():
            g = out.grad.reshape(n, groups, cout // groups, hout * wout)
            if weight.requires_grad:
                gw = np.matmul(g, cols.transpose(0, 1, 3, 2)).sum(axis=0)
                _accum(weight, gw.reshape(wd.shape))
            if bias is not None and bias.requires_grad:
                _accum(bias, out.grad.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gcols = np.matmul(wm.transpose(0, 2, 1), g)
                gcols = gcols.reshape(n, cin, k, k, hout, wout)
                gxp = np.zeros((n, cin, h + 2 * p, w + 2 * p), dtype=xd.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + stride * hout:stride,
                            j:j + stride * wout:stride] += gcols[:, :, i, j]
                _accum(x, gxp[:, :, p:p + h, p:p + w])
        out._backward = _bwd
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {xd.shape} and {wd.shape}")
    if bias is not None and bias.data.shape != (wd.shape[0],):
        raise ShapeError("linear: bias must have shape (Cout,)")
    out_data = xd @ wd.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    parents = (x, weight) if bias is None else (x, weight, bias)
    out, track = _result(out_data, parents, "linear")
    if track:
        def _bwd():
            g = out.grad
            if x.requires_grad:
                _accum(x, g @ wd)
            if weight.requires_grad:
                _accum(weight, g.T @ xd)
            if bias is not None and bias.requires_grad:
                _accum(bias, g.sum(axis=0))
        out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; the subgradient routes to the first (lowest linear index)
    maximal element of each window."""
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError("maxpool2d expects NCHW input")
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError("maxpool2d: k >= 1 and stride >= 1 required")
    n, c, h, w = xd.shape
    hout = (h + 2 * padding - k) // stride + 1
    wout = (w + 2 * padding - k) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError("maxpool2d: kernel larger than padded input")
    p = padding
    if p:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    else:
        xp = xd
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, hout, wout, k * k)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out, track = _result(np.ascontiguousarray(out_data), (x,), "maxpool2d")
    if track:
        def _bwd():
            ys = arg // k + (np.arange(hout) * stride).reshape(1, 1, hout, 1)
            xs = arg % k + (np.arange(wout) * stride).reshape(1, 1, 1, wout)
            ni = np.arange(n).reshape(n, 1, 1, 1)
            ci = np.arange(c).reshape(1, c, 1, 1)
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=xd.dtype)
            np.add.at(gxp, (ni, ci, ys, xs), out.grad)
            _accum(x, gxp[:, :, p:p + h, p:p + w])
        out._backward = _bwd
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError("global_avg_pool expects NCHW input")
    n, c, h, w = xd.shape
    out, track = _result(xd.mean(axis=(2, 3)), (x,), "global_avg_pool")
    if track:
        def _bwd():
            scale = 1.0 / (h * w)
            _accum(x, np.broadcast_to((out.grad * scale)[:, :, None, None], xd.shape))
        out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm_c(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel dimension independently at each position.

    Accepts NCHW feature maps or NC feature vectors (treated as H=W=1).
    """
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd.reshape(xd.shape[0], xd.shape[1], 1, 1)
    if xd.ndim != 4:
        raise ShapeError("layer_norm_c expects NCHW or NC input")
    c = xd.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("layer_norm_c: gamma/beta must have shape (C,)")
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    if squeeze:
        out_data = out_data.reshape(out_data.shape[0], c)
    out, track = _result(out_data, (x, gamma, beta), "layer_norm_c")
    if track:
        def _bwd():
            g = out.grad.reshape(xhat.shape)
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                ghat = g * gamma.data[None, :, None, None]
                gx = inv * (ghat - ghat.mean(axis=1, keepdims=True)
                            - xhat * (ghat * xhat).mean(axis=1, keepdims=True))
                _accum(x, gx.reshape(x.data.shape))
        out._backward = _bwd
    return out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               momentum: float = 0.1, eps: float = 1e-5,
               training: bool = True) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    Training mode normalizes with batch statistics and updates the running
    buffers in place via an exponential moving average (biased variance).
    Eval mode uses the stored buffers; before any training step those are the
    initial (0, 1) statistics, which is documented behaviour, not an error.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError("batch_norm expects NCHW input")
    c = xd.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batch_norm: gamma/beta must have shape (C,)")
    gam = gamma.data[None, :, None, None]
    bet = beta.data[None, :, None, None]
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean[...] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[...] = (1.0 - momentum) * running_var + momentum * var
        inv = 1.0 / np.sqrt(var + eps)[None, :, None, None]
        xhat = (xd - mu[None, :, None, None]) * inv
        out, track = _result(gam * xhat + bet, (x, gamma, beta), "batch_norm")
        if track:
            def _bwd():
                g = out.grad
                if gamma.requires_grad:
                    _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
                if beta.requires_grad:
                    _accum(beta, g.sum(axis=(0, 2, 3)))
                if x.requires_grad:
                    ghat = g * gam
                    gx = inv * (ghat - ghat.mean(axis=(0, 2, 3), keepdims=True)
                                - xhat * (ghat * xhat).mean(axis=(0, 2, 3), keepdims=True))
                    _accum(x, gx)
            out._backward = _bwd
        return out

    inv = (1.0 / np.sqrt(running_var + eps))[None, :, None, None]
    centered = xd - running_mean[None, :, None, None]
    out, track = _result(gam * centered * inv + bet, (x, gamma, beta), "batch_norm")
    if track:
        def _bwd():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * centered * inv).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                _accum(x, g * gam * inv)
        out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Stable on both tails.
    pos = z >= 0
    ez = np.exp(np.where(pos, -z, z))
    return np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _unary(x: Tensor, out_data: np.ndarray, dfdx: np.ndarray, op: str) -> Tensor:
    out, track = _result(out_data, (x,), op)
    if track:
        def _bwd():
            _accum(x, out.grad * dfdx)
        out._backward = _bwd
    return out


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _unary(x, np.maximum(xd, 0), (xd > 0).astype(xd.dtype), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    xd = x.data
    return _unary(x, np.where(xd > 0, xd, alpha * xd),
                  np.where(xd > 0, 1.0, alpha).astype(xd.dtype), "lrelu")


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with a learned negative slope per channel (axis 1)."""
    xd = x.data
    if xd.ndim not in (2, 4):
        raise ShapeError("prelu expects NC or NCHW input")
    c = xd.shape[1]
    if alpha.data.shape != (c,):
        raise ShapeError("prelu: alpha must have shape (C,)")
    a = alpha.data[None, :, None, None] if xd.ndim == 4 else alpha.data[None, :]
    neg = xd <= 0
    out, track = _result(np.where(neg, a * xd, xd), (x, alpha), "prelu")
    if track:
        def _bwd():
            g = out.grad
            if x.requires_grad:
                _accum(x, g * np.where(neg, a, 1.0).astype(xd.dtype))
            if alpha.requires_grad:
                ga = g * np.where(neg, xd, 0.0)
                axes = (0, 2, 3) if xd.ndim == 4 else (0,)
                _accum(alpha, ga.sum(axis=axes))
        out._backward = _bwd
    return out


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return _unary(x, np.logaddexp(0.0, xd).astype(xd.dtype), _sigmoid(xd), "softplus")


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    xd = x.data
    phi_cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return _unary(x, xd * phi_cdf, phi_cdf + xd * pdf, "gelu")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return _unary(x, xd * s, s * (1.0 + xd * (1.0 - s)), "silu")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    # exp only on the clamped branch so large positives cannot overflow.
    en = np.exp(np.minimum(xd, 0.0))
    return _unary(x, np.where(xd > 0, xd, alpha * (en - 1.0)),
                  np.where(xd > 0, 1.0, alpha * en).astype(xd.dtype), "elu")


def activation(kind: str, x: Tensor, alpha: "Tensor | float | None" = None) -> Tensor:
    """Dispatch by activation kind; `alpha` is a Tensor for prelu, a float
    for lrelu/elu (defaults 0.01 and 1.0), ignored otherwise."""
    if kind == "relu":
        return relu(x)
    if kind == "lrelu":
        return leaky_relu(x, 0.01 if alpha is None else float(alpha))
    if kind == "prelu":
        if not isinstance(alpha, Tensor):
            raise ShapeError("prelu requires a per-channel alpha Tensor")
        return prelu(x, alpha)
    if kind == "softplus":
        return softplus(x)
    if kind == "gelu":
        return gelu(x)
    if kind == "silu":
        return silu(x)
    if kind == "elu":
        return elu(x, 1.0 if alpha is None else float(alpha))
    raise ShapeError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; stabilized by row-max subtraction."""
    z = logits.data
    lab = np.asarray(labels)
    if z.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects (N, K) logits")
    n, kk = z.shape
    if lab.shape != (n,) or not np.issubdtype(lab.dtype, np.integer):
        raise ShapeError("labels must be an int vector of length N")
    if n == 0:
        raise ShapeError("empty batch")
    if lab.min() < 0 or lab.max() >= kk:
        raise ShapeError("label out of range")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    denom = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(denom)
    loss = -logp[np.arange(n), lab].mean()
    out, track = _result(np.asarray(loss, dtype=z.dtype), (logits,), "softmax_cross_entropy")
    if track:
        def _bwd():
            p = ez / denom
            p[np.arange(n), lab] -= 1.0
            _accum(logits, p * (out.grad / n))
        out._backward = _bwd
    return out
