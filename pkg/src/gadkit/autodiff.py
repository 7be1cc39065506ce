"""Dense float64 tensors with reverse-mode differentiation.

A deliberately small kernel: everything is float64, shapes are explicit,
and the only implicit broadcast is adding a bias row to a matrix (plus
Python scalars).  Each op records its parents and a vector-Jacobian
closure; backward() walks the graph topologically and accumulates into
the gradients of parameters, so calling it twice adds twice unless
zero_grads() is invoked.  Checkpoints serialize parameters to a flat
JSON map of name -> (shape, values).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import AllMaskedRow, DimError, NonScalarLoss, SchemaError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


class Param(Tensor):
    """Named leaf tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


# ---------------------------------------------------------------------------
# primitives

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = float(b)
        return Tensor(a.data + s, _parents=(a,), _vjp=lambda g: (g,))
    b = _as_tensor(b)
    if a.shape == b.shape:
        return Tensor(a.data + b.data, _parents=(a, b), _vjp=lambda g: (g, g))
    # bias row: (m, n) + (n,) or (m, n) + (1, n)
    if a.ndim == 2 and b.ndim in (1, 2):
        row_shape = (a.shape[1],) if b.ndim == 1 else (1, a.shape[1])
        if b.shape == row_shape:
            def vjp(g):
                return (g, g.sum(axis=0).reshape(b.shape))
            return Tensor(a.data + b.data, _parents=(a, b), _vjp=vjp)
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _vjp=lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        s = float(b)
        return Tensor(a.data * s, _parents=(a,), _vjp=lambda g: (g * s,))
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return Tensor(
        a.data * b.data,
        _parents=(a, b),
        _vjp=lambda g: (g * b.data, g * a.data),
    )


def div(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / float(b))
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot divide shapes {a.shape} and {b.shape}")

    def vjp(g):
        return (g / b.data, -g * a.data / (b.data * b.data))

    return Tensor(a.data / b.data, _parents=(a, b), _vjp=vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot matmul shapes {a.shape} and {b.shape}")

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _vjp=vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor(a.data.T.copy(), _parents=(a,), _vjp=lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(
        a.data.reshape(shape).copy(),
        _parents=(a,),
        _vjp=lambda g: (g.reshape(old),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _vjp=vjp,
    )


def tslice(a: Tensor, key) -> Tensor:
    """Basic indexing (ints and slices).  Use gather() for index arrays."""
    out = a.data[key]

    def vjp(g):
        z = np.zeros_like(a.data)
        z[key] = z[key] + g
        return (z,)

    return Tensor(np.array(out), _parents=(a,), _vjp=vjp)


def gather(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select rows (axis 0) or columns (axis 1) by integer index array;
    repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if axis not in (0, 1) or a.ndim != 2:
        raise ShapeError("gather supports matrices along axis 0 or 1")

    def vjp(g):
        z = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(z, idx, g)
        else:
            zt = z.T
            np.add.at(zt, idx, g.T)
        return (z,)

    data = a.data[idx] if axis == 0 else a.data[:, idx]
    return Tensor(data, _parents=(a,), _vjp=vjp)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, 1.0) * g,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _vjp=vjp)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(
        np.where(mask, a.data, 0.0), _parents=(a,), _vjp=lambda g: (g * mask,)
    )


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably for large |x|."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * sig,))


def _masked_input(a: Tensor, mask) -> np.ndarray:
    if mask is None:
        return a.data
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"mask shape {m.shape} does not match data shape {a.shape}")
    return np.where(m, a.data, -np.inf)


def masked_softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis; masked-out entries get exactly 0.

    Raises AllMaskedRow when a row has no unmasked, finite entry.
    """
    x = _masked_input(a, mask)
    m = np.max(x, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise AllMaskedRow("softmax row with every entry masked")
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def softmax(a: Tensor) -> Tensor:
    return masked_softmax(a, None)


def masked_logsumexp(a: Tensor, mask=None) -> Tensor:
    """log-sum-exp along the last axis over unmasked entries."""
    x = _masked_input(a, mask)
    m = np.max(x, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise AllMaskedRow("log-sum-exp row with every entry masked")
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s)).squeeze(-1)
    soft = e / s

    def vjp(g):
        return (np.expand_dims(g, -1) * soft,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def logsumexp(a: Tensor) -> Tensor:
    return masked_logsumexp(a, None)


# ---------------------------------------------------------------------------
# composites

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def ones_like_column(m: int) -> Tensor:
    return Tensor(np.ones((m, 1)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization of a matrix with learned gain and bias."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects a matrix, got shape {x.shape}")
    m, n = x.shape
    ones_row = Tensor(np.ones((1, n)))
    mu = matmul(tmean(x, axis=1, keepdims=True), ones_row)
    cent = x - mu
    var = tmean(mul(cent, cent), axis=1, keepdims=True)
    denom = matmul(sqrt(add(var, eps)), ones_row)
    xh = div(cent, denom)
    gain_full = matmul(ones_like_column(m), reshape(gain, (1, n)))
    return add(mul(xh, gain_full), reshape(bias, (1, n)))


def cosine_matrix(f: Tensor, eps: float = 1e-12) -> Tensor:
    """Pairwise cosine similarities of row vectors."""
    norm_col = sqrt(add(tsum(mul(f, f), axis=1, keepdims=True), eps))
    denom = matmul(norm_col, transpose(norm_col))
    return div(matmul(f, transpose(f)), denom)


# ---------------------------------------------------------------------------
# backward pass

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's .grad."""
    if loss.data.shape != ():
        raise NonScalarLoss(f"loss must be a scalar, got shape {loss.data.shape}")
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.array(1.0)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def global_grad_norm(params: Iterable[Param]) -> float:
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Param], max_norm: float) -> float:
    """Scale all gradients down to the given global L2 norm.  Returns the
    pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints

def save_params(params: Mapping[str, Param]) -> dict:
    return {
        name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
        for name, p in params.items()
    }


def load_params(obj: Mapping) -> dict[str, Param]:
    out: dict[str, Param] = {}
    for name, entry in obj.items():
        try:
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"parameter {name!r}: {exc}") from exc
        out[name] = Param(name, values)
    return out


def params_to_file(params: Mapping[str, Param], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(save_params(params), fh)


def params_from_file(path: str) -> dict[str, Param]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_params(json.load(fh))


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_param: str
    worst_index: int


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Param],
    *,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of f() against central differences.

    f must be a deterministic scalar function of the given parameters.
    The relative error uses max(1, |a|, |b|) as denominator.
    """
    zero_grads(params)
    backward(f())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    worst_param = ""
    worst_index = -1
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            plus = float(f().data)
            flat[i] = saved - h
            minus = float(f().data)
            flat[i] = saved
            fd = (plus - minus) / (2.0 * h)
            an = float(analytic[pi].reshape(-1)[i])
            rel = abs(fd - an) / max(1.0, abs(fd), abs(an))
            if rel > worst:
                worst = rel
                worst_param = getattr(p, "name", f"param{pi}")
                worst_index = i
    zero_grads(params)
    return GradCheckReport(
        max_rel_error=worst,
        passed=worst <= tol,
        worst_param=worst_param,
        worst_index=worst_index,
    )
