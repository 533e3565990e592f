"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` is a node in an eagerly evaluated computation graph: building
an op computes its forward value immediately and records a closure that
maps the node's output gradient to its parents' gradients. ``backward()``
on a scalar node walks the graph once in reverse topological order and
accumulates gradients additively, so fan-out is handled by plain addition.

Everything is float64 and single-threaded by design: small models, tight
gradient checks, and bit-identical results across platforms matter more
here than speed. Tensors are treated as immutable once created; nothing
in this module writes to ``data`` after construction.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ContractError, NumericError, ShapeError
from .rng import mix, random_u64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN2 = math.log(2.0)


class Tensor:
    """Dense float64 array plus its position in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward_fn", "_needs_grad")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), backward_fn=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shapes intact
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._needs_grad = self.requires_grad or any(p._needs_grad for p in self._parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(np.full(self.shape, float(other))), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def square(self):
        return square(self)

    def abs(self):
        return absolute(self)

    def mean(self):
        return mean_all(self)

    def sum(self):
        return sum_all(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def reshape(self, shape):
        return reshape(self, shape)

    # -- backward pass -----------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable node that needs a gradient.

        The root must be scalar. Gradients from earlier calls are discarded
        first, so each call stands alone.
        """
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.shape}")
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is None or node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent._needs_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; parents appear before their consumers."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = in progress, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, post = stack.pop()
        if post:
            state[id(node)] = 2
            order.append(node)
            continue
        st = state.get(id(node), 0)
        if st == 2:
            continue
        if st == 1:
            raise ContractError("cycle detected in computation graph")
        state[id(node)] = 1
        stack.append((node, True))
        for parent in node._parents:
            if state.get(id(parent), 0) == 0:
                stack.append((parent, False))
    return order


# -- leaf constructors ------------------------------------------------------

def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# -- elementwise arithmetic --------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return Tensor(a.data + float(b), op="add_scalar", parents=(a,),
                      backward_fn=lambda g: (g,))
    _check_same_shape("add", a, b)
    return Tensor(a.data + b.data, op="add", parents=(a, b),
                  backward_fn=lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return Tensor(a.data - float(b), op="sub_scalar", parents=(a,),
                      backward_fn=lambda g: (g,))
    _check_same_shape("sub", a, b)
    return Tensor(a.data - b.data, op="sub", parents=(a, b),
                  backward_fn=lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        c = float(b)
        return Tensor(a.data * c, op="mul_scalar", parents=(a,),
                      backward_fn=lambda g: (g * c,))
    _check_same_shape("mul", a, b)
    return Tensor(a.data * b.data, op="mul", parents=(a, b),
                  backward_fn=lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / float(b))
    _check_same_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return Tensor(out, op="div", parents=(a, b), backward_fn=backward)


def square(x: Tensor) -> Tensor:
    return Tensor(x.data * x.data, op="square", parents=(x,),
                  backward_fn=lambda g: (g * (2.0 * x.data),))


def absolute(x: Tensor) -> Tensor:
    return Tensor(np.abs(x.data), op="abs", parents=(x,),
                  backward_fn=lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor(out, op="exp", parents=(x,), backward_fn=lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.data), op="log", parents=(x,),
                  backward_fn=lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient is blocked where the clamp binds."""
    keep = x.data > floor
    return Tensor(np.maximum(x.data, floor), op="clamp_min", parents=(x,),
                  backward_fn=lambda g: (g * keep,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope)
    return Tensor(np.where(pos, x.data, x.data * slope), op="leaky_relu", parents=(x,),
                  backward_fn=lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to stay overflow-free on large magnitudes.
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor(out, op="sigmoid", parents=(x,),
                  backward_fn=lambda g: (g * out * (1.0 - out),))


def normal_cdf(x: Tensor) -> Tensor:
    """Standard normal CDF; the backward rule is the normal pdf."""
    out = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))

    def backward(g):
        return (g * (np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI),)

    return Tensor(out, op="normal_cdf", parents=(x,), backward_fn=backward)


# -- structural ops ----------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError("reshape", x.shape, shape, "element counts differ")
    return Tensor(x.data.reshape(shape), op="reshape", parents=(x,),
                  backward_fn=lambda g: (g.reshape(x.shape),))


def select_channel(x: Tensor, index: int) -> Tensor:
    """Pick one leading-axis slice of a (C, H, W) tensor."""
    if x.data.ndim != 3:
        raise ContractError(f"select_channel expects a rank-3 tensor, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise ContractError(f"channel {index} out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return Tensor(x.data[index].copy(), op="select_channel", parents=(x,), backward_fn=backward)


def expand_channels(v: Tensor, spatial: tuple[int, int]) -> Tensor:
    """Broadcast a per-channel vector (C,) to a (C, H, W) field."""
    if v.data.ndim != 1:
        raise ContractError(f"expand_channels expects a rank-1 tensor, got shape {v.shape}")
    h, w = int(spatial[0]), int(spatial[1])
    out = np.broadcast_to(v.data[:, None, None], (v.shape[0], h, w)).copy()
    return Tensor(out, op="expand_channels", parents=(v,),
                  backward_fn=lambda g: (g.sum(axis=(1, 2)),))


def mask_multiply(x: Tensor, m: Tensor) -> Tensor:
    """Pixelwise mask product: an (H, W) mask broadcast over channels."""
    if m.data.ndim != 2:
        raise ShapeError("mask_multiply", x.shape, m.shape, "mask must be rank 2")
    if x.data.ndim == 2:
        if x.shape != m.shape:
            raise ShapeError("mask_multiply", x.shape, m.shape)
        out = x.data * m.data

        def backward2(g):
            gm = (g * x.data) if m._needs_grad else None
            return g * m.data, gm

        return Tensor(out, op="mask_multiply", parents=(x, m), backward_fn=backward2)
    if x.data.ndim == 3:
        if x.shape[1:] != m.shape:
            raise ShapeError("mask_multiply", x.shape, m.shape)
        out = x.data * m.data[None, :, :]

        def backward3(g):
            gm = (g * x.data).sum(axis=0) if m._needs_grad else None
            return g * m.data[None, :, :], gm

        return Tensor(out, op="mask_multiply", parents=(x, m), backward_fn=backward3)
    raise ShapeError("mask_multiply", x.shape, m.shape, "image must be rank 2 or 3")


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return Tensor(np.asarray(x.data.mean()), op="mean", parents=(x,),
                  backward_fn=lambda g: (np.full(x.shape, float(g) / n),))


def sum_all(x: Tensor) -> Tensor:
    return Tensor(np.asarray(x.data.sum()), op="sum", parents=(x,),
                  backward_fn=lambda g: (np.full(x.shape, float(g)),))


# -- neural-network ops -------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map of a vector: w @ x + b with w of shape (out, in)."""
    if x.data.ndim != 1 or w.data.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError("linear", w.shape, x.shape)
    out = w.data @ x.data
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError("linear", w.shape, b.shape, "bias")
        out = out + b.data

    def backward(g):
        gw = np.outer(g, x.data)
        gx = w.data.T @ g
        gb = g.copy() if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor(out, op="linear", parents=parents, backward_fn=backward)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            out_h: int, out_w: int) -> np.ndarray:
    cin = x.shape[0]
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(cin, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s1 * stride, s2 * stride), writeable=False)
    # the reshape materializes one contiguous copy of the patch matrix
    return view.reshape(cin * kh * kw, out_h * out_w)


def _col2im(cols: np.ndarray, cin: int, h: int, w: int, kh: int, kw: int,
            stride: int, padding: int, out_h: int, out_w: int) -> np.ndarray:
    blocks = cols.reshape(cin, kh, kw, out_h, out_w)
    padded = np.zeros((cin, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                blocks[:, i, j])
    if padding > 0:
        return padded[:, padding:-padding, padding:-padding]
    return padded


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of a (Cin, H, W) tensor with (Cout, Cin, kh, kw) weights.

    Zero padding, arbitrary positive stride. Implemented as im2col plus a
    single matmul so the backward pass is two matmuls and a col2im scatter.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError("conv2d", x.shape, w.shape, "need (Cin,H,W) and (Cout,Cin,kh,kw)")
    cin, h, width = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError("conv2d", x.shape, w.shape, "input channels differ")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: bad stride/padding ({stride}, {padding})")
    if h + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError("conv2d", x.shape, w.shape, "kernel larger than padded input")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    cols = _im2col(x.data, kh, kw, stride, padding, out_h, out_w)
    w_mat = w.data.reshape(cout, -1)
    out = w_mat @ cols
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError("conv2d", w.shape, b.shape, "bias")
        out = out + b.data[:, None]
    out = out.reshape(cout, out_h, out_w)

    def backward(g):
        g_mat = g.reshape(cout, -1)
        gw = (g_mat @ cols.T).reshape(w.shape)
        gx = _col2im(w_mat.T @ g_mat, cin, h, width, kh, kw, stride, padding, out_h, out_w)
        if b is not None:
            return gx, gw, g_mat.sum(axis=1)
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor(out, op="conv2d", parents=parents, backward_fn=backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor spatial upsampling of a (C, H, W) tensor."""
    if x.data.ndim != 3:
        raise ContractError(f"upsample_nearest expects rank 3, got shape {x.shape}")
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return Tensor(out, op="upsample_nearest", parents=(x,), backward_fn=backward)


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """Rearrange (C*r*r, H, W) into (C, H*r, W*r)."""
    if x.data.ndim != 3:
        raise ContractError(f"pixel_shuffle expects rank 3, got shape {x.shape}")
    crr, h, w = x.shape
    if crr % (r * r) != 0:
        raise ContractError(f"pixel_shuffle: {crr} channels not divisible by {r * r}")
    c = crr // (r * r)
    out = (x.data.reshape(c, r, r, h, w)
           .transpose(0, 3, 1, 4, 2)
           .reshape(c, h * r, w * r))

    def backward(g):
        gi = (g.reshape(c, h, r, w, r)
              .transpose(0, 2, 4, 1, 3)
              .reshape(crr, h, w))
        return (np.ascontiguousarray(gi),)

    return Tensor(np.ascontiguousarray(out), op="pixel_shuffle", parents=(x,), backward_fn=backward)


# -- numeric guards and gradient checking -------------------------------------

def require_finite(x: Tensor, context: str) -> Tensor:
    """Raise NumericError if any entry of ``x`` is NaN or infinite."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite value in {context}")
    return x


def grad_check(build: Callable[[], Tensor], params: Iterable[Tensor] | dict,
               eps: float = 1e-4, coords_per_param: int = 8, seed: int = 0) -> float:
    """Compare analytic gradients against central finite differences.

    ``build`` must deterministically reconstruct the scalar loss from the
    current parameter values. For each parameter a few coordinates are
    probed: half chosen where the analytic gradient is largest and half
    drawn from a seeded stream. Returns the maximum relative error
    ``|a - fd| / max(1e-12, |a| + |fd|)`` over all probes.

    A central difference only estimates a derivative where the function is
    smooth at the probe scale, so each coordinate's estimate is validated
    against a second one at a quarter step: coordinates where the two
    disagree (a kink of leaky-relu/abs/clamp inside the probe interval) or
    where both the analytic value and the estimate sit below the
    finite-difference resolution floor are excluded from the maximum. A
    wrong gradient of any measurable size still fails, since there the
    estimates agree with each other but not with the analytic value.
    """
    if isinstance(params, dict):
        tensors = list(params.values())
    else:
        tensors = list(params)
    if eps <= 0:
        raise ContractError("grad_check eps must be positive")

    loss = build()
    if loss.size != 1:
        raise ContractError("grad_check target must be scalar")
    f0 = loss.item()
    if not np.isfinite(f0):
        raise NumericError("non-finite loss in grad_check")
    for p in tensors:
        p.grad = None  # drop anything stale from earlier passes
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in tensors]

    # smallest gradient magnitude a central difference at this eps can resolve
    resolution = 512.0 * np.finfo(np.float64).eps * max(1.0, abs(f0)) / eps

    def probe(flat_data, idx, step):
        orig = flat_data[idx]
        flat_data[idx] = orig + step
        hi = build().item()
        flat_data[idx] = orig - step
        lo = build().item()
        flat_data[idx] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError("non-finite loss while probing in grad_check")
        return (hi - lo) / (2.0 * step)

    worst = 0.0
    for pi, (p, a) in enumerate(zip(tensors, analytic)):
        n = p.size
        if n == 0:
            continue
        flat_a = a.ravel()
        k = min(coords_per_param, n)
        top = max(1, k // 2)
        by_mag = np.argsort(-np.abs(flat_a), kind="stable")[:top]
        rand = random_u64(mix(seed, 0x6FD, pi), k - top) % np.uint64(n) if k > top else []
        indices = list(dict.fromkeys([int(i) for i in by_mag] + [int(i) for i in rand]))
        flat_data = p.data.ravel()
        for idx in indices:
            fd = probe(flat_data, idx, eps)
            fd_fine = probe(flat_data, idx, eps / 4.0)
            a_val = float(flat_a[idx])
            if abs(a_val) < resolution and abs(fd) < resolution:
                continue
            if abs(fd - fd_fine) > 1e-4 * (abs(fd) + abs(fd_fine)) + resolution:
                continue  # non-smooth inside the probe interval
            rel = abs(a_val - fd) / max(1e-12, abs(a_val) + abs(fd))
            worst = max(worst, rel)
    return worst


LN2 = _LN2
