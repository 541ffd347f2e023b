"""Dense float64 tensors with reverse-mode gradients, Adam, and a finite-difference checker.

Everything here is just enough autodiff for the gallery-graph models: 2-D
matrix products, broadcast elementwise arithmetic, the activations the
models use, and a fused two-logit cross entropy. All math is double
precision with a fixed (numpy) summation order, so repeated runs are
bit-identical on one machine with one thread.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _as_tensor(x) -> "Tensor":
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class Tensor:
    """A float64 array plus an optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad=False, parents=(), backprop=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backprop = backprop
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        out = Tensor(self.data.T, parents=(self,))

        def backprop():
            _accumulate(self, out.grad.T)

        out._backprop = backprop
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic (numpy broadcasting rules) --

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backprop():
            _accumulate(self, _unbroadcast(out.grad, self.data.shape))
            _accumulate(other, _unbroadcast(out.grad, other.data.shape))

        out._backprop = backprop
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))

        def backprop():
            _accumulate(self, -out.grad)

        out._backprop = backprop
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backprop():
            _accumulate(self, _unbroadcast(out.grad * other.data, self.data.shape))
            _accumulate(other, _unbroadcast(out.grad * self.data, other.data.shape))

        out._backprop = backprop
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))

        def backprop():
            _accumulate(self, _unbroadcast(out.grad / other.data, self.data.shape))
            _accumulate(other, _unbroadcast(-out.grad * self.data / (other.data ** 2),
                                            other.data.shape))

        out._backprop = backprop
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), parents=(self,))

        def backprop():
            _accumulate(self, out.grad * 0.5 / out.data)

        out._backprop = backprop
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), parents=(self,))

        def backprop():
            _accumulate(self, out.grad * out.data)

        out._backprop = backprop
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def backprop():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(g, self.data.shape).copy())

        out._backprop = backprop
        return out

    def mean(self):
        return self.sum() / float(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    # -- reverse accumulation --

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop()


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backprop():
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    out._backprop = backprop
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """xw + b with the bias broadcast over rows."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if b.data.ndim != 1 or b.data.shape[0] != w.data.shape[1]:
        raise DimensionError(
            f"affine: bias shape {b.data.shape} does not match weight {w.data.shape}")
    return matmul(x, w) + b


def activation(x: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    if kind == "relu":
        mask = (x.data > 0).astype(np.float64)
    elif kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
        mask = np.where(x.data > 0, 1.0, slope)
    else:
        raise ValueError(f"unknown activation kind: {kind!r}")
    out = Tensor(x.data * mask, parents=(x,))

    def backprop():
        _accumulate(x, out.grad * mask)

    out._backprop = backprop
    return out


def concat_cols(parts) -> Tensor:
    """Concatenate 2-D tensors along columns."""
    parts = [_as_tensor(p) for p in parts]
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ: {[p.data.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))

    def backprop():
        offset = 0
        for p in parts:
            width = p.data.shape[1]
            _accumulate(p, out.grad[:, offset:offset + width])
            offset += width

    out._backprop = backprop
    return out


def tile_rows(row: Tensor, n: int) -> Tensor:
    """Repeat a 1xK row tensor N times; gradients sum back over rows."""
    row = _as_tensor(row)
    if row.data.ndim != 2 or row.data.shape[0] != 1:
        raise DimensionError(f"tile_rows expects a 1xK tensor, got {row.data.shape}")
    out = Tensor(np.repeat(row.data, n, axis=0), parents=(row,))

    def backprop():
        _accumulate(row, out.grad.sum(axis=0, keepdims=True))

    out._backprop = backprop
    return out


def two_class_ce(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross entropy over rows of Nx2 logits, log-sum-exp stabilized."""
    logits = _as_tensor(logits)
    labels = list(labels)
    if len(labels) == 0:
        raise ValueError("two_class_ce: empty input")
    if logits.data.ndim != 2 or logits.data.shape != (len(labels), 2):
        raise DimensionError(
            f"two_class_ce: logits shape {logits.data.shape} does not match "
            f"{len(labels)} two-class labels")
    if any(y not in (0, 1) for y in labels):
        raise ValueError("two_class_ce: labels must be 0 or 1")
    y = np.asarray(labels, dtype=np.intp)
    z = logits.data
    shift = z.max(axis=1, keepdims=True)
    ez = np.exp(z - shift)
    log_z = np.log(ez.sum(axis=1)) + shift[:, 0]
    picked = z[np.arange(len(y)), y]
    losses = log_z - picked
    out = Tensor(losses.sum() / len(y), parents=(logits,))
    softmax = ez / ez.sum(axis=1, keepdims=True)

    def backprop():
        g = softmax.copy()
        g[np.arange(len(y)), y] -= 1.0
        _accumulate(logits, out.grad * g / len(y))

    out._backprop = backprop
    return out


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Plain-numpy stable row softmax (inference side)."""
    shift = z.max(axis=1, keepdims=True)
    ez = np.exp(z - shift)
    return ez / ez.sum(axis=1, keepdims=True)


class ParamSet:
    """Named float64 parameters plus Adam moment state.

    Moment accumulators are created on the first optimizer step and always
    mirror their parameter's shape.
    """

    def __init__(self, values=None):
        self.values: dict[str, np.ndarray] = {}
        if values:
            for name, v in values.items():
                self.add(name, v)
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def add(self, name: str, array):
        self.values[name] = np.asarray(array, dtype=np.float64).copy()

    def names(self):
        return list(self.values)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh gradient-tracking tensors viewing the current parameter arrays."""
        return {name: Tensor(v, requires_grad=True) for name, v in self.values.items()}

    def copy(self) -> "ParamSet":
        dup = ParamSet()
        for name, v in self.values.items():
            dup.add(name, v)
        dup.step = self.step
        dup.m = {k: v.copy() for k, v in self.m.items()}
        dup.v = {k: v.copy() for k, v in self.v.items()}
        return dup

    def n_scalars(self) -> int:
        return sum(v.size for v in self.values.values())


def grads_from_leaves(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Collect a gradient map after backward(); untouched leaves get zeros."""
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in leaves.items()}


def adam_step(params: ParamSet, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              lr_overrides: dict | None = None) -> ParamSet:
    """One in-place Adam update with bias correction; returns `params`."""
    for name in params.values:
        if name not in grads:
            raise KeyError(f"adam_step: missing gradient for parameter '{name}'")
    params.step += 1
    t = params.step
    for name, value in params.values.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise DimensionError(
                f"adam_step: gradient shape {g.shape} != parameter '{name}' shape {value.shape}")
        if name not in params.m:
            params.m[name] = np.zeros_like(value)
            params.v[name] = np.zeros_like(value)
        params.m[name] = beta1 * params.m[name] + (1 - beta1) * g
        params.v[name] = beta2 * params.v[name] + (1 - beta2) * g * g
        m_hat = params.m[name] / (1 - beta1 ** t)
        v_hat = params.v[name] / (1 - beta2 ** t)
        rate = lr if lr_overrides is None else lr_overrides.get(name, lr)
        value -= rate * m_hat / (np.sqrt(v_hat) + eps)
    return params


def grad_check(closure, params: ParamSet, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central finite differences.

    `closure` maps a dict of leaf tensors (as from ParamSet.leaves()) to a
    scalar loss Tensor and must be a pure function of those leaves.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"grad_check: eps must be in (0, 1e-2], got {eps}")

    loss = closure(params.leaves())
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: non-finite loss")
    loss.backward()
    # leaves() views the underlying arrays, so re-run on fresh leaves
    leaves = params.leaves()
    loss = closure(leaves)
    loss.backward()
    analytic = grads_from_leaves(leaves)

    worst = 0.0
    for name, value in params.values.items():
        flat = value.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = closure(params.leaves()).item()
            flat[i] = saved - eps
            down = closure(params.leaves()).item()
            flat[i] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(
                    f"grad_check: non-finite loss perturbing '{name}'[{i}]")
            numeric = (up - down) / (2 * eps)
            err = abs(ana[i] - numeric) / max(1.0, abs(ana[i]), abs(numeric))
            worst = max(worst, err)
    return worst
