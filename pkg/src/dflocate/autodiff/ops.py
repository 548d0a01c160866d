"""Differentiable primitives.

Every op takes ``Tensor`` (or array-like) inputs, returns a new ``Tensor`` and,
when recording, attaches a closure mapping the output gradient to one
gradient per parent.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_node

CE_CLAMP = 1e-12


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"node '{op}': cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), bw, "mul")


def power(a, k: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * k * a.data ** (k - 1),)

    return make_node(a.data**k, (a,), bw, f"pow{k}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"node 'matmul': incompatible shapes {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def reduce_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make_node(np.sum(a.data, axis=axis), (a,), bw, "reduce-sum")


def reduce_mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def bw(g):
        if axis is None:
            return (np.full(a.shape, g / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / n,)

    return make_node(np.mean(a.data, axis=axis), (a,), bw, "reduce-mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"node 'reshape': cannot reshape {a.shape} to {shape}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return make_node(out, (a,), bw, "reshape")


# activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")
    out.kink_margin = float(np.min(np.abs(a.data))) if a.size else None
    return out


def trelu(a) -> Tensor:
    """Truncated ReLU, min(max(u, 0), 1). Subgradient 0 at both kinks."""
    a = as_tensor(a)
    mask = (a.data > 0) & (a.data < 1)
    out = make_node(np.clip(a.data, 0.0, 1.0), (a,), lambda g: (g * mask,), "trelu")
    if a.size:
        out.kink_margin = float(np.min(np.minimum(np.abs(a.data), np.abs(a.data - 1.0))))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return make_node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    s = _softmax(a.data, axis)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return make_node(s, (a,), bw, "softmax")


# losses

def _check_labels(op, logits, labels):
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"node '{op}': logits {logits.shape} vs labels {labels.shape}")


def cross_entropy(logits, labels, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy over the last axis; probabilities clamped at 1e-12.

    ``reduction='none'`` gives per-instance losses.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels).astype(np.int64)
    _check_labels("cross-entropy", logits, labels)
    n = logits.shape[0]
    p = _softmax(logits.data, -1)
    py = p[np.arange(n), labels]
    active = py > CE_CLAMP
    per = -np.log(np.maximum(py, CE_CLAMP))

    def bw(g):
        grad = p.copy()
        grad[np.arange(n), labels] -= 1.0
        grad *= active[:, None]
        if reduction == "mean":
            return (grad * (g / n),)
        return (grad * g[:, None],)

    out = per.mean() if reduction == "mean" else per
    return make_node(np.asarray(out), (logits,), bw, "cross-entropy")


def squared_error(pred, target, reduction: str = "mean") -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 2 and pred.shape[1] == 1:
        flat = reshape(pred, (pred.shape[0],))
    else:
        flat = pred
    if flat.shape != target.shape:
        raise ShapeError(f"node 'squared-error': prediction {pred.shape} vs target {target.shape}")
    r = flat.data - target
    n = r.size

    def bw(g):
        if reduction == "mean":
            return (2.0 * r * (g / n),)
        return (2.0 * r * g,)

    out = np.mean(r * r) if reduction == "mean" else r * r
    return make_node(np.asarray(out), (flat,), bw, "squared-error")


def l1_penalty(tensors, weight: float) -> Tensor:
    total = None
    for t in tensors:
        s = t.data

        def bw(g, s=s):
            return (g * weight * np.sign(s),)

        node = make_node(np.asarray(weight * np.abs(s).sum()), (t,), bw, "l1")
        total = node if total is None else add(total, node)
    return total if total is not None else Tensor(0.0)


# weight normalisation

def _wn_axes(ndim: int, out_axis: int):
    return tuple(i for i in range(ndim) if i != out_axis)


def weight_norm(v, g, out_axis: int = 0) -> Tensor:
    """w = g * v / ||v||, norm taken per slice along ``out_axis``."""
    v, g = as_tensor(v), as_tensor(g)
    axes = _wn_axes(v.ndim, out_axis)
    shape = [1] * v.ndim
    shape[out_axis] = v.shape[out_axis]
    norm = np.sqrt(np.sum(v.data**2, axis=axes, keepdims=True))
    if np.any(norm == 0):
        raise ShapeError("node 'weight-norm': zero kernel slice")
    u = v.data / norm
    gb = g.data.reshape(shape)

    def bw(gw):
        proj = np.sum(gw * u, axis=axes, keepdims=True)
        return gb / norm * (gw - u * proj), proj.reshape(g.shape)

    return make_node(gb * u, (v, g), bw, "weight-norm")


# convolution; generic over one or two spatial dimensions

def _norm_tuple(v, k):
    return (v,) * k if isinstance(v, int) else tuple(v)


def _same_pads(kernel, stride):
    pads = []
    for k in kernel:
        total = k - 1
        pads.append((total // 2, total - total // 2))
    return pads


def _resolve_pads(padding, kernel, nsp):
    if padding == "same":
        return _same_pads(kernel, 1)
    if padding == "valid":
        return [(0, 0)] * nsp
    p = _norm_tuple(padding, nsp)
    return [(q, q) for q in p]


def _window(offset, stride, out_sp):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_sp))


def _patches(a: np.ndarray, kernel, stride, out_sp) -> np.ndarray:
    """Strided view (N, C, *out, *K) of every kernel-sized window of ``a``."""
    nsp = len(kernel)
    v = sliding_window_view(a, kernel, axis=tuple(range(2, 2 + nsp)))
    return v[(slice(None), slice(None)) + tuple(slice(0, s * (n - 1) + 1, s) for s, n in zip(stride, out_sp))]


def _scatter(cols: np.ndarray, target: np.ndarray, kernel, stride, out_sp):
    """Adjoint of ``_patches``: add cols (N, C, *out, *K) back into target."""
    nsp = len(kernel)
    for off in itertools.product(*[range(k) for k in kernel]):
        target[(slice(None), slice(None)) + _window(off, stride, out_sp)] += cols[(Ellipsis,) + off]
    return target


def conv(x, w, b=None, stride=1, padding="same", op: str = "conv") -> Tensor:
    """Cross-correlation. x: (N, C, *S), w: (O, C, *K), b: (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    nsp = x.ndim - 2
    if nsp not in (1, 2) or w.ndim != nsp + 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"node '{op}': input {x.shape} incompatible with kernel {w.shape}")
    kernel = w.shape[2:]
    stride = _norm_tuple(stride, nsp)
    pads = _resolve_pads(padding, kernel, nsp)
    xp = np.pad(x.data, [(0, 0), (0, 0)] + pads) if any(map(any, pads)) else x.data
    out_sp = tuple((xp.shape[2 + i] - kernel[i]) // stride[i] + 1 for i in range(nsp))
    if min(out_sp) < 1:
        raise ShapeError(f"node '{op}': kernel {kernel} larger than padded input {xp.shape[2:]}")
    o = w.shape[0]
    cols = _patches(xp, kernel, stride, out_sp)
    k_axes = tuple(range(2 + nsp, 2 + 2 * nsp))
    w_axes = tuple(range(2, 2 + nsp))
    # (N, *out, O)
    out = np.moveaxis(np.tensordot(cols, w.data, axes=((1,) + k_axes, (1,) + w_axes)), -1, 1)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape((1, o) + (1,) * nsp)
        parents.append(b)
    sp_axes = tuple(range(2, 2 + nsp))

    def bw(g):
        gx = gw = None
        if w.requires_grad:
            # (O, C, *K)
            gw = np.tensordot(g, cols, axes=((0,) + sp_axes, (0,) + sp_axes))
        if x.requires_grad:
            # (N, *out, C, *K) -> (N, C, *out, *K)
            t = np.moveaxis(np.tensordot(g, w.data, axes=([1], [0])), 1 + nsp, 1)
            gx = _scatter(t, np.zeros_like(xp), kernel, stride, out_sp)
            if any(map(any, pads)):
                gx = gx[(slice(None), slice(None)) + tuple(slice(lo, gx.shape[2 + i] - hi) for i, (lo, hi) in enumerate(pads))]
        res = [gx, gw]
        if b is not None:
            res.append(g.sum(axis=(0,) + sp_axes))
        return res

    return make_node(out, parents, bw, op)


def conv_transpose(x, w, b=None, stride=1, padding="same", op: str = "conv-transpose") -> Tensor:
    """Transposed convolution. x: (N, C, *S), w: (C, O, *K).

    ``padding='same'`` crops the full output to ``S * stride``.
    """
    x, w = as_tensor(x), as_tensor(w)
    nsp = x.ndim - 2
    if nsp not in (1, 2) or w.ndim != nsp + 2 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"node '{op}': input {x.shape} incompatible with kernel {w.shape}")
    kernel = w.shape[2:]
    stride = _norm_tuple(stride, nsp)
    in_sp = x.shape[2:]
    full_sp = tuple((in_sp[i] - 1) * stride[i] + kernel[i] for i in range(nsp))
    if padding == "same":
        crops = []
        for i in range(nsp):
            total = full_sp[i] - in_sp[i] * stride[i]
            if total < 0:
                raise ShapeError(f"node '{op}': kernel {kernel} shorter than stride {stride}")
            crops.append((total // 2, total - total // 2))
    elif padding == "valid":
        crops = [(0, 0)] * nsp
    else:
        crops = [(q, q) for q in _norm_tuple(padding, nsp)]
    n, o = x.shape[0], w.shape[1]
    # (N, *S, O, *K) -> (N, O, *S, *K)
    t = np.moveaxis(np.tensordot(x.data, w.data, axes=([1], [0])), 1 + nsp, 1)
    full = _scatter(t, np.zeros((n, o) + full_sp), kernel, stride, in_sp)
    crop = (slice(None), slice(None)) + tuple(slice(lo, full_sp[i] - hi) for i, (lo, hi) in enumerate(crops))
    out = full[crop]
    if min(out.shape[2:]) < 1:
        raise ShapeError(f"node '{op}': empty output")
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape((1, o) + (1,) * nsp)
        parents.append(b)
    sp_axes = tuple(range(2, 2 + nsp))
    k_axes = tuple(range(2 + nsp, 2 + 2 * nsp))

    def bw(g):
        gfull = np.zeros((n, o) + full_sp)
        gfull[crop] = g
        cols = _patches(gfull, kernel, stride, in_sp)  # (N, O, *S, *K)
        gx = gw = None
        if x.requires_grad:
            w_axes = tuple(range(2, 2 + nsp))
            gx = np.moveaxis(np.tensordot(cols, w.data, axes=((1,) + k_axes, (1,) + w_axes)), -1, 1)
        if w.requires_grad:
            gw = np.tensordot(x.data, cols, axes=((0,) + sp_axes, (0,) + sp_axes))
        res = [gx, gw]
        if b is not None:
            res.append(g.sum(axis=(0,) + sp_axes))
        return res

    return make_node(out, parents, bw, op)


def conv1d(x, w, b=None, stride=1, padding="same") -> Tensor:
    if as_tensor(x).ndim != 3:
        raise ShapeError(f"node 'conv1d': expected (N, C, L) input, got {as_tensor(x).shape}")
    return conv(x, w, b, stride, padding, op="conv1d")


def conv2d(x, w, b=None, stride=1, padding="same") -> Tensor:
    if as_tensor(x).ndim != 4:
        raise ShapeError(f"node 'conv2d': expected (N, C, H, W) input, got {as_tensor(x).shape}")
    return conv(x, w, b, stride, padding, op="conv2d")
