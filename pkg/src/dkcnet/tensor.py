"""Rank-4 tensors with reverse-mode differentiation.

Activations are laid out as (batch, channels, height, width) in float64.
Parameters (kernels, FC weights, biases) use whatever rank they need; the
ops below document the shapes they accept.

Every op records a node holding its parents and a closure mapping the
output gradient to the parents' gradients.  :func:`backward` walks the
recorded graph once in reverse topological order and *accumulates* into
``Tensor.grad``; call :func:`zero_grads` between steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class StateError(RuntimeError):
    """Raised when an op is used before the state it needs exists."""


class Tensor:
    """A float64 array plus an optional gradient slot and graph link."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str,
) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward_fn`` receives dL/d(output) and returns one gradient (or None)
    per parent, in order.  No node is recorded when no parent needs grad.
    """
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _check4(x: Tensor, name: str = "x") -> None:
    if x.data.ndim != 4:
        raise DimensionError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Gradients accumulate across calls.  Intermediate (non-leaf) tensors also
    receive their gradient, which is what Grad-CAM reads.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise DimensionError(
                    f"{node.op} backward produced {pg.shape} for parent {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _same_pads(size: int, k: int, dilation: int, stride: int) -> tuple[int, int, int]:
    # the output pixel sits on kernel tap (k - 1) // 2, so an even kernel
    # gets no leading pad and its whole dilated remainder trails
    out = -(-size // stride)
    total = max((out - 1) * stride + (k - 1) * dilation + 1 - size, 0)
    before = min((k - 1) // 2 * dilation, total)
    return out, before, total - before


def conv_output_geometry(
    h: int, w: int, kh: int, kw: int, stride: int, dilation: int, padding: str
) -> tuple[int, int, tuple[int, int, int, int]]:
    """Return (out_h, out_w, (top, bottom, left, right)) for a convolution.

    "same" pads with zeros so that out = ceil(in / stride).  Leading
    (top/left) padding is ((k - 1) // 2) * dilation, capped by the total;
    the rest goes to the bottom/right.  Odd kernels at stride 1 are padded
    symmetrically; a 2x2 kernel is padded only at the bottom/right.
    """
    eh = (kh - 1) * dilation + 1
    ew = (kw - 1) * dilation + 1
    if padding == "same":
        oh, top, bottom = _same_pads(h, kh, dilation, stride)
        ow, left, right = _same_pads(w, kw, dilation, stride)
        return oh, ow, (top, bottom, left, right)
    if padding == "valid":
        if eh > h or ew > w:
            raise DimensionError(
                f"effective kernel extent {eh}x{ew} exceeds input {h}x{w}"
            )
        return (h - eh) // stride + 1, (w - ew) // stride + 1, (0, 0, 0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d_dilated(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    *,
    dilation: int = 1,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation with dilated taps.

    ``kernel`` is (c_out, c_in, kh, kw); ``bias`` is (c_out,).  The input is
    unfolded once into columns of shape (n, c_in*kh*kw, out_h*out_w) and the
    product is a single batched matmul.
    """
    _check4(x)
    if kernel.data.ndim != 4:
        raise DimensionError(f"kernel must be (c_out, c_in, kh, kw), got {kernel.shape}")
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValueError(f"dilation must be a positive int, got {dilation!r}")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if ci != c:
        raise DimensionError(f"kernel expects {ci} input channels, input has {c}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"bias must have shape ({co},), got {bias.shape}")

    oh, ow, (top, bottom, left, right) = conv_output_geometry(
        h, w, kh, kw, stride, dilation, padding
    )
    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))

    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                                  c0:c0 + stride * (ow - 1) + 1:stride]
    cols = cols.reshape(n, c * kh * kw, oh * ow)
    kmat = kernel.data.reshape(co, c * kh * kw)
    out = np.matmul(kmat, cols).reshape(n, co, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _backward(g: np.ndarray):
        g2 = g.reshape(n, co, oh * ow)
        dk = None
        if kernel.requires_grad:
            dk = np.einsum("nol,nkl->ok", g2, cols, optimize=True).reshape(kernel.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(kmat.T, g2).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    dxp[:, :, r0:r0 + stride * (oh - 1) + 1:stride,
                        c0:c0 + stride * (ow - 1) + 1:stride] += dcols[:, :, i, j]
            dx = dxp[:, :, top:top + h, left:left + w]
        grads = [dx, dk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return grads

    return make_node(out, parents, _backward, "conv2d")


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormStats:
    """Running per-channel statistics for eval-mode batch norm."""

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, channels: int) -> "BatchNormStats":
        return cls(np.zeros(channels), np.ones(channels), 0)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with the biased batch variance and folds the batch
    statistics into ``stats`` as ``running = (1 - momentum) * running +
    momentum * batch``.  Eval mode reads ``stats`` and refuses to run before
    any train-mode batch has been seen.
    """
    _check4(x)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise DimensionError("train-mode batch norm needs n*h*w >= 2 per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        stats.mean = (1.0 - momentum) * stats.mean + momentum * mu
        stats.var = (1.0 - momentum) * stats.var + momentum * var
        stats.count += 1
    elif mode == "eval":
        if stats.count == 0:
            raise StateError("batch norm in eval mode before any statistics were recorded")
        mu, var = stats.mean, stats.var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def _backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if mode == "train":
            m = n * h * w
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), _backward, "batch_norm")


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _broadcast_ok(x: Tensor, y: Tensor) -> bool:
    if x.shape == y.shape:
        return True
    return (
        x.data.ndim == 4
        and y.data.ndim == 4
        and y.shape[:2] == x.shape[:2]
        and y.shape[2:] == (1, 1)
    )


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum; ``y`` may be (n, c, 1, 1) against (n, c, h, w)."""
    if not _broadcast_ok(x, y):
        raise DimensionError(f"cannot add shapes {x.shape} and {y.shape}")
    reduce_y = x.shape != y.shape

    def _backward(g: np.ndarray):
        gy = g.sum(axis=(2, 3), keepdims=True) if reduce_y else g
        return g, gy

    return make_node(x.data + y.data, (x, y), _backward, "add")


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product; ``y`` may be (n, c, 1, 1) against (n, c, h, w)."""
    if not _broadcast_ok(x, y):
        raise DimensionError(f"cannot multiply shapes {x.shape} and {y.shape}")
    reduce_y = x.shape != y.shape

    def _backward(g: np.ndarray):
        gx = g * y.data
        gy = g * x.data
        if reduce_y:
            gy = gy.sum(axis=(2, 3), keepdims=True)
        return gx, gy

    return make_node(x.data * y.data, (x, y), _backward, "mul")


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors, recorded as one node."""
    if not tensors:
        raise ValueError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"cannot add shapes {shape} and {t.shape}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return make_node(out, tensors, lambda g: [g] * len(tensors), "add_n")


def scale(x: Tensor, factor: float) -> Tensor:
    return make_node(x.data * factor, (x,), lambda g: (g * factor,), "scale")


# ---------------------------------------------------------------------------
# Pooling, dense, dropout, reductions
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    _check4(x)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_node(
        out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),), "gap"
    )


def global_max_pool(x: Tensor) -> Tensor:
    """Spatial max; the gradient goes to the first maximal position (row-major)."""
    _check4(x)
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def _backward(g: np.ndarray):
        dx = np.zeros((n, c, h * w))
        np.put_along_axis(dx, idx[..., None], g.reshape(n, c, 1), axis=2)
        return (dx.reshape(x.shape),)

    return make_node(out, (x,), _backward, "gmp")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of (n, c_in, 1, 1) to (n, c_out, 1, 1); ``weight`` is (c_out, c_in)."""
    _check4(x)
    n, c, h, w = x.shape
    if (h, w) != (1, 1):
        raise DimensionError(f"fully_connected expects (n, c, 1, 1), got {x.shape}")
    if weight.data.ndim != 2 or weight.shape[1] != c:
        raise DimensionError(f"weight {weight.shape} does not accept {c} input features")
    co = weight.shape[0]
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"bias must have shape ({co},), got {bias.shape}")
    x2 = x.data.reshape(n, c)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g: np.ndarray):
        g2 = g.reshape(n, co)
        grads = [(g2 @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_node(out.reshape(n, co, 1, 1), parents, _backward, "fc")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, mode: str = "train") -> Tensor:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate); eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise StateError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def sum_all(x: Tensor) -> Tensor:
    return make_node(
        x.data.sum().reshape(1, 1, 1, 1), (x,),
        lambda g: (np.full(x.shape, g.item()),), "sum",
    )


def mean_all(x: Tensor) -> Tensor:
    size = x.data.size
    return make_node(
        x.data.mean().reshape(1, 1, 1, 1), (x,),
        lambda g: (np.full(x.shape, g.item() / size),), "mean",
    )


def select_channel(x: Tensor, index: int) -> Tensor:
    """Slice channel ``index`` keeping rank 4: (n, c, h, w) -> (n, 1, h, w)."""
    _check4(x)

    def _backward(g: np.ndarray):
        dx = np.zeros(x.shape)
        dx[:, index:index + 1] = g
        return (dx,)

    return make_node(x.data[:, index:index + 1].copy(), (x,), _backward, "select")


def permute_channels(x: Tensor, perm: np.ndarray) -> Tensor:
    """Output channel k is input channel ``perm[k]``."""
    _check4(x)
    perm = np.asarray(perm)
    inverse = np.argsort(perm)
    return make_node(x.data[:, perm], (x,), lambda g: (g[:, inverse],), "permute")


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    per_input: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"gradcheck {verdict}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.1e})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x.data``."""
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f().data.sum())
        flat[i] = orig - step
        fm = float(f().data.sum())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_check(
    f: Callable[[], Tensor],
    inputs: Tensor | Sequence[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-8,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``f()`` against central differences.

    ``f`` must be deterministic and read ``inputs`` through closure; entries
    are perturbed in place and restored.  ``analytic`` overrides the
    backprop gradients (used to confirm a corrupted gradient is caught).
    """
    if isinstance(inputs, Tensor):
        named = {"x": inputs}
    elif isinstance(inputs, dict):
        named = dict(inputs)
    else:
        named = {f"input{i}": t for i, t in enumerate(inputs)}

    if analytic is None:
        zero_grads(named.values())
        backward(f())
        analytic = {
            k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for k, t in named.items()
        }

    errors = {}
    for name, t in named.items():
        numeric = numerical_gradient(f, t, step)
        errors[name] = relative_error(analytic[name], numeric, floor)
    worst = max(errors.values()) if errors else 0.0
    return GradCheckReport(worst, tolerance, worst < tolerance, errors)
