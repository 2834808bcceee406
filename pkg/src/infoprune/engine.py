"""Dense numerical core: convolution, pooling, dense layers, losses, SGD, SVD.

Everything works on float64 numpy arrays. Forward functions that have a
backward counterpart return ``(output, cache)`` when asked for the cache; the
backward function takes that cache and raises :class:`StateError` without it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError, StateError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _check_ndim(x: np.ndarray, ndim: int, name: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{name}: expected {ndim} axes, got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvCache:
    input_shape: tuple
    windows: np.ndarray  # B x C x Ho x Wo x k x k view of the padded input
    weights: np.ndarray
    stride: int
    padding: int


def conv2d_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d_forward(x, weights, bias=None, stride: int = 1, padding: int = 0, return_cache: bool = False):
    """Cross-correlation of ``x`` (B,C,H,W) with ``weights`` (O,C,k,k)."""
    x = as_tensor(x)
    weights = as_tensor(weights)
    _check_ndim(x, 4, "input")
    _check_ndim(weights, 4, "weights")
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")
    if x.shape[1] != weights.shape[1]:
        raise DimensionError(
            f"channel axis (1): input has {x.shape[1]} channels, weights expect {weights.shape[1]}"
        )
    k = weights.shape[2]
    if weights.shape[3] != k:
        raise DimensionError(f"kernel axes (2,3) must be square, got {weights.shape[2:]}")
    h, w = x.shape[2], x.shape[3]
    if k > h + 2 * padding:
        raise DimensionError(f"height axis (2): kernel {k} exceeds padded height {h + 2 * padding}")
    if k > w + 2 * padding:
        raise DimensionError(f"width axis (3): kernel {k} exceeds padded width {w + 2 * padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weights.shape[0],):
            raise DimensionError(f"bias axis (0): expected {weights.shape[0]} entries, got {bias.shape}")

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B,Ho,Wo,O) -> (B,O,Ho,Wo)
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    if return_cache:
        return out, ConvCache(x.shape, windows, weights, stride, padding)
    return out


def conv2d_backward(grad_out, cache: ConvCache | None):
    """Return ``(grad_input, grad_weights, grad_bias)`` for a cached forward call."""
    if cache is None:
        raise StateError("conv2d_backward called without a forward cache")
    grad_out = as_tensor(grad_out)
    b, c, h, w = cache.input_shape
    o, _, k, _ = cache.weights.shape
    ho, wo = cache.windows.shape[2], cache.windows.shape[3]
    if grad_out.shape != (b, o, ho, wo):
        raise DimensionError(f"grad_out shape {grad_out.shape} does not match forward output {(b, o, ho, wo)}")

    grad_w = np.tensordot(grad_out, cache.windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))

    s, p = cache.stride, cache.padding
    # B x Ho x Wo x C x k x k
    cols = np.tensordot(grad_out, cache.weights, axes=([1], [0]))
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # B,C,k,k,Ho,Wo
    gxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, i, j]
    grad_x = gxp[:, :, p:p + h, p:p + w] if p else gxp
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# --------------------------------------------------------------------------
# dense / activation / pooling
# --------------------------------------------------------------------------


def dense_forward(x, weights, bias=None, return_cache: bool = False):
    x = as_tensor(x)
    _check_ndim(x, 2, "input")
    if x.shape[1] != weights.shape[1]:
        raise DimensionError(f"feature axis (1): input has {x.shape[1]}, weights expect {weights.shape[1]}")
    out = x @ weights.T
    if bias is not None:
        out = out + bias
    if return_cache:
        return out, (x, weights)
    return out


def dense_backward(grad_out, cache):
    if cache is None:
        raise StateError("dense_backward called without a forward cache")
    x, weights = cache
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def maxpool2d_forward(x, size: int = 2, return_cache: bool = False):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    x = as_tensor(x)
    _check_ndim(x, 4, "input")
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise DimensionError(f"spatial axes (2,3): {h}x{w} too small for {size}x{size} pooling")
    blocks = x[:, :, :ho * size, :wo * size].reshape(b, c, ho, size, wo, size)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, size * size)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    if return_cache:
        return out, (x.shape, idx, size)
    return out


def maxpool2d_backward(grad_out, cache):
    if cache is None:
        raise StateError("maxpool2d_backward called without a forward cache")
    shape, idx, size = cache
    b, c, h, w = shape
    ho, wo = idx.shape[2], idx.shape[3]
    blocks = np.zeros((b, c, ho, wo, size * size), dtype=DTYPE)
    np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    grad = np.zeros(shape, dtype=DTYPE)
    grad[:, :, :ho * size, :wo * size] = blocks.reshape(b, c, ho * size, wo * size)
    return grad


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_per_sample(logits, labels):
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    return -np.take_along_axis(log_softmax(logits), labels[..., None], axis=-1)[..., 0]


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / B``."""
    logits = as_tensor(logits)
    _check_ndim(logits, 2, "logits")
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels: expected shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: dict | None = None):
    """One SGD update with heavy-ball momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Returns new ``(params, velocity)`` dicts; inputs are not modified.
    """
    if lr <= 0:
        raise InputError(f"lr must be positive, got {lr}")
    velocity = velocity or {}
    new_params, new_velocity = {}, {}
    for key, p in params.items():
        g = grads[key]
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"{key}: gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        v = velocity.get(key)
        step = g + weight_decay * p
        v = step if v is None else momentum * v + step
        new_velocity[key] = v
        new_params[key] = p - lr * v
    return new_params, new_velocity


# --------------------------------------------------------------------------
# SVD
# --------------------------------------------------------------------------


def jacobi_svd(a, tol: float = 1e-15, max_sweeps: int = 60):
    """One-sided Jacobi SVD of an m x n matrix with m >= n.

    Rotates column pairs of ``a`` until they are mutually orthogonal; the column
    norms are then the singular values. Returns ``(u, s, vt)`` with ``s`` descending.
    """
    a = as_tensor(a).copy()
    m, n = a.shape
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = a[:, i] @ a[:, i]
                beta = a[:, j] @ a[:, j]
                gamma = a[:, i] @ a[:, j]
                norm = np.sqrt(alpha) * np.sqrt(beta)
                if gamma == 0.0 or norm == 0.0 or abs(gamma) <= tol * norm:
                    continue
                off = max(off, abs(gamma) / norm)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.hypot(1.0, zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ai, aj = a[:, i].copy(), a[:, j].copy()
                a[:, i], a[:, j] = c * ai - s * aj, s * ai + c * aj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if off <= tol:
            break
    sv = np.linalg.norm(a, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    v = v[:, order]
    a = a[:, order]
    u = np.zeros_like(a)
    nz = sv > 0
    u[:, nz] = a[:, nz] / sv[nz]
    return u, sv, v.T


def svd_singular_values(matrix, method: str = "lapack", validate: bool = False):
    """Descending singular values of a 2-D matrix (or a stack of them).

    ``method="jacobi"`` runs the one-sided Jacobi routine on a single matrix;
    ``validate=True`` (jacobi only) checks the reconstruction ``U S V^T`` to 1e-9.
    """
    a = as_tensor(matrix)
    if method == "lapack":
        if a.ndim < 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
        return np.linalg.svd(a, compute_uv=False)
    if method != "jacobi":
        raise InputError(f"unknown svd method {method!r}")
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    transposed = a.shape[0] < a.shape[1]
    work = a.T if transposed else a
    u, s, vt = jacobi_svd(work)
    if validate:
        recon = (u * s) @ vt
        scale = max(1.0, np.abs(work).max(initial=0.0))
        if np.abs(recon - work).max(initial=0.0) > 1e-9 * scale:
            raise StateError("jacobi SVD reconstruction check failed")
    return s
