"""Minimal reverse-mode autodiff on float64 numpy arrays.

Every operation the navigation policy needs is implemented as a taped
primitive: forward evaluation plus a closure that routes upstream
gradients to the operands. Gradients are checked against central finite
differences (see ``check_gradients``), so the engine stays honest without
depending on an external framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import EvaluationError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return np.array(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backprop -------------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of this value into every reachable leaf."""
        if not self.requires_grad:
            raise EvaluationError("backward() on a tensor that does not require grad")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                if p.requires_grad:
                    visit(p)
            topo.append(node)

        visit(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def _accum(self, grad):
        if self.grad is None:
            self.grad = grad.copy() if grad.shape == self.data.shape else _unbroadcast(grad, self.data.shape)
        else:
            self.grad = self.grad + _unbroadcast(grad, self.data.shape)

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accum(g)
            if other.requires_grad:
                other._accum(g)

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accum(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accum(g * other.data)
            if other.requires_grad:
                other._accum(g * self.data)

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accum(g / other.data)
            if other.requires_grad:
                other._accum(-g * self.data / (other.data ** 2))

        return Tensor._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accum(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                if other.data.ndim == 1:
                    self._accum(np.outer(g, other.data) if self.data.ndim == 2 else g * other.data)
                else:
                    gg = g[..., None, :] if self.data.ndim == 1 else g
                    self._accum(_unbroadcast(gg @ np.swapaxes(other.data, -1, -2), self.data.shape).reshape(self.data.shape))
            if other.requires_grad:
                if self.data.ndim == 1:
                    other._accum(np.outer(self.data, g) if other.data.ndim == 2 else self.data * g)
                else:
                    gg = g[..., :, None] if other.data.ndim == 1 else g
                    other._accum(_unbroadcast(np.swapaxes(self.data, -1, -2) @ gg, other.data.shape).reshape(other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accum(g.reshape(old))

        return Tensor._result(out_data, (self,), backward)

    def swapaxes(self, a, b):
        out_data = np.swapaxes(self.data, a, b)

        def backward(g):
            self._accum(np.swapaxes(g, a, b))

        return Tensor._result(out_data, (self,), backward)

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._result(out_data, (self,), backward)


def concat(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            if t.requires_grad:
                t._accum(g[tuple(sl)])
            start += n

    return Tensor._result(out_data, tuple(tensors), backward)


# -- elementwise nonlinearities ------------------------------------------------


def exp(x):
    out_data = np.exp(x.data)

    def backward(g):
        x._accum(g * out_data)

    return Tensor._result(out_data, (x,), backward)


def log(x):
    def backward(g):
        x._accum(g / x.data)

    return Tensor._result(np.log(x.data), (x,), backward)


def sqrt(x):
    out_data = np.sqrt(x.data)

    def backward(g):
        x._accum(g * 0.5 / out_data)

    return Tensor._result(out_data, (x,), backward)


def tanh(x):
    out_data = np.tanh(x.data)

    def backward(g):
        x._accum(g * (1.0 - out_data ** 2))

    return Tensor._result(out_data, (x,), backward)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accum(g * out_data * (1.0 - out_data))

    return Tensor._result(out_data, (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data ** 2) * _INV_SQRT_2PI
        x._accum(g * (cdf + x.data * pdf))

    return Tensor._result(out_data, (x,), backward)


def absolute(x):
    def backward(g):
        x._accum(g * np.sign(x.data))

    return Tensor._result(np.abs(x.data), (x,), backward)


def atan2(y, x):
    y = y if isinstance(y, Tensor) else Tensor(y)
    x = x if isinstance(x, Tensor) else Tensor(x)
    out_data = np.arctan2(y.data, x.data)

    def backward(g):
        # the gradient is undefined at the origin; treat it as zero there
        denom = np.maximum(x.data ** 2 + y.data ** 2, 1e-300)
        if y.requires_grad:
            y._accum(g * x.data / denom)
        if x.requires_grad:
            x._accum(-g * y.data / denom)

    return Tensor._result(out_data, (y, x), backward)


def clip(x, lo, hi):
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        inside = (x.data >= lo) & (x.data <= hi)
        x._accum(g * inside)

    return Tensor._result(out_data, (x,), backward)


# -- core neural ops -----------------------------------------------------------


def softmax(x, axis=-1):
    """Row-stochastic softmax along `axis`, computed with max-subtraction."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - inner))

    return Tensor._result(out_data, (x,), backward)


def linear(x, W, b=None):
    """Affine map y = x W + b with gradients for x, W, and b."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"linear: input feature axis has size {x.shape[-1]} "
            f"but weight expects {W.shape[0]}"
        )
    if b is not None and b.shape[-1] != W.shape[-1]:
        raise ShapeError(
            f"linear: bias axis has size {b.shape[-1]} "
            f"but weight output axis is {W.shape[-1]}"
        )
    y = x @ W
    return y + b if b is not None else y


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each last-axis row to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


def rope2d_angles(pos, dim, base=10000.0):
    """Per-pair rotation angles for 2D rotary encoding.

    The first dim/4 feature pairs rotate with the x coordinate, the second
    dim/4 pairs with the y coordinate; frequencies decay geometrically.
    """
    if dim % 4 != 0:
        raise ShapeError(f"rope2d needs a feature dim divisible by 4, got {dim}")
    pos = np.asarray(pos, dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[None, :]
    n_axis = dim // 4
    freqs = base ** (-np.arange(n_axis, dtype=np.float64) / n_axis)
    ang_x = pos[..., 0:1] * freqs
    ang_y = pos[..., 1:2] * freqs
    return np.concatenate([ang_x, ang_y], axis=-1)  # (..., dim//2)


def rope2d(x, pos, base=10000.0):
    """Rotate consecutive feature pairs of `x` by position-dependent angles.

    `x` has shape (..., n, d) with d divisible by 4; `pos` holds one (x, y)
    coordinate per row. The rotation is an isometry and dot products of two
    encoded vectors depend only on their relative position.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    d = x.shape[-1]
    ang = rope2d_angles(pos, d, base)  # (..., d//2)
    cos, sin = np.cos(ang), np.sin(ang)
    xp = x.data.reshape(x.shape[:-1] + (d // 2, 2))
    even, odd = xp[..., 0], xp[..., 1]
    out_pairs = np.stack([even * cos - odd * sin, even * sin + odd * cos], axis=-1)
    out_data = out_pairs.reshape(out_pairs.shape[:-2] + (d,))

    def backward(g):
        gp = g.reshape(g.shape[:-1] + (d // 2, 2))
        ge, go = gp[..., 0], gp[..., 1]
        # inverse rotation routes the gradient back; _accum unbroadcasts
        gx = np.stack([ge * cos + go * sin, -ge * sin + go * cos], axis=-1)
        x._accum(gx.reshape(g.shape))

    return Tensor._result(out_data, (x,), backward)


# -- finite-difference gradient verification -----------------------------------


@dataclass
class GradReport:
    """Outcome of comparing analytic gradients against central differences."""

    op_name: str
    max_rel_error: float = 0.0
    per_input_errors: list = field(default_factory=list)


def _rel_err(a, f):
    return abs(a - f) / max(abs(a), abs(f), 1.0)


def check_gradients(op, inputs, step=1e-5, tol=1e-4, op_name=None, coords_per_input=None, rng=None):
    """Compare analytic gradients of `op` against central finite differences.

    `op` maps the tensors in `inputs` to a Tensor; its output is reduced to a
    scalar through a fixed random weighting so a single backward pass yields
    the full gradient. Every scalar coordinate of every input is perturbed by
    ±step unless `coords_per_input` caps the number of sampled coordinates per
    tensor (useful for whole-model checks).

    Returns a GradReport with one max relative error per input.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    name = op_name or getattr(op, "__name__", "op")
    if not inputs:
        return GradReport(op_name=name, max_rel_error=0.0, per_input_errors=[])
    rng = rng or np.random.default_rng(0)

    out = op(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise EvaluationError(f"{name}: non-finite forward value")
    weights = rng.standard_normal(out.shape) if out.shape else np.float64(1.0)

    def scalar():
        val = op(*inputs)
        return float((val.data * weights).sum())

    for t in inputs:
        t.zero_grad()
    loss = (out * Tensor(weights)).sum()
    loss.backward()

    per_input = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        idxs = range(n)
        if coords_per_input is not None and n > coords_per_input:
            idxs = rng.choice(n, size=coords_per_input, replace=False)
        worst = 0.0
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + step
            up = scalar()
            flat[i] = keep - step
            down = scalar()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            worst = max(worst, _rel_err(analytic.reshape(-1)[i], fd))
        per_input.append(worst)

    return GradReport(op_name=name, max_rel_error=max(per_input), per_input_errors=per_input)


def check_gradients_directional(loss_fn, params, n_directions=4, step=1e-5, rng=None):
    """Central-difference check of a scalar loss along random parameter directions.

    Validates the full analytic gradient of `loss_fn()` with two evaluations
    per direction instead of two per coordinate, which keeps whole-model
    checks fast. Returns the max relative error over directions.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for _ in range(n_directions):
        vs = [rng.standard_normal(p.data.shape) for p in params]
        norm = math.sqrt(sum(float((v * v).sum()) for v in vs))
        vs = [v / norm for v in vs]
        analytic = sum(float((g * v).sum()) for g, v in zip(grads, vs))
        for p, v in zip(params, vs):
            p.data += step * v
        up = loss_fn().item()
        for p, v in zip(params, vs):
            p.data -= 2.0 * step * v
        down = loss_fn().item()
        for p, v in zip(params, vs):
            p.data += step * v
        fd = (up - down) / (2.0 * step)
        worst = max(worst, _rel_err(analytic, fd))
    return worst
