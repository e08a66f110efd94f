"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tape`` records every operation whose inputs include a tensor watched by that
tape. ``Tape.gradient`` walks the record once, newest first, and accumulates
gradients additively where a tensor fans out. Tensors that belong to no tape are
constants: operations on them compute values and record nothing.

    tape = Tape()
    w = tape.variable(np.ones((3, 2)))
    loss = mean(square(matmul(x, w)))
    grads = tape.gradient(loss, {"w": w})
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from sublab.exceptions import ContractError, InputDomainError, ShapeError

type Array = npt.NDArray[np.float64]
type IntArray = npt.NDArray[np.int64]
type Operand = Tensor | Array | float | int
type BackwardFn = Callable[[Array], Sequence[Array | None]]

KLDirection = Literal["student_teacher", "teacher_student"]

LAYER_NORM_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))


class Tensor:
    __slots__ = ("data", "tape")
    # Let numpy arrays on the left defer to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, data: npt.ArrayLike, tape: "Tape | None" = None) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, watched={self.tape is not None})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Operand) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        return getitem(self, index)


@dataclass(frozen=True, slots=True, eq=False)
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Append-only record of operations, in execution order."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value: npt.ArrayLike) -> Tensor:
        """Watch a copy of ``value``; operations on it are recorded."""
        return Tensor(np.array(value, dtype=np.float64, copy=True), tape=self)

    def record(
        self, op: str, inputs: tuple[Tensor, ...], data: Array, backward: BackwardFn
    ) -> Tensor:
        out = Tensor(data, tape=self)
        self._nodes.append(_Node(op, inputs, out, backward))
        return out

    def gradient(
        self, loss: Tensor, sources: Mapping[str, Tensor]
    ) -> dict[str, Array]:
        """Total derivative of scalar ``loss`` with respect to each source.

        Sources the loss does not depend on get a zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(
                f"gradient requires a scalar loss, got shape {loss.shape}"
            )
        grads: dict[int, Array] = {}
        if loss.tape is self:
            grads[id(loss)] = np.ones_like(loss.data)
            for node in reversed(self._nodes):
                upstream = grads.get(id(node.output))
                if upstream is None:
                    continue
                for tensor, grad in zip(
                    node.inputs, node.backward(upstream), strict=True
                ):
                    if grad is None or tensor.tape is not self:
                        continue
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + grad
                    else:
                        grads[key] = grad
        return {
            name: np.array(grads.get(id(t), np.zeros_like(t.data)), dtype=np.float64)
            for name, t in sources.items()
        }


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, Array]:
    """Gradient map of ``loss`` over ``params`` (zeros when nothing is watched)."""
    if loss.tape is None:
        if loss.data.size != 1:
            raise ContractError(
                f"gradient requires a scalar loss, got shape {loss.shape}"
            )
        return {name: np.zeros_like(t.data) for name, t in params.items()}
    return loss.tape.gradient(loss, params)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, inputs: tuple[Tensor, ...], data: Array, bw: BackwardFn) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(data)
    if len(tapes) > 1:
        raise ContractError(f"{op}: operands are watched by different tapes")
    (tape,) = tapes.values()
    return tape.record(op, inputs, data, bw)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise ------------------------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", x, y)
    return _emit(
        "add",
        (x, y),
        x.data + y.data,
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", x, y)
    return _emit(
        "sub",
        (x, y),
        x.data - y.data,
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", x, y)
    return _emit(
        "mul",
        (x, y),
        x.data * y.data,
        lambda g: (
            _unbroadcast(g * y.data, x.shape),
            _unbroadcast(g * x.data, y.shape),
        ),
    )


def div(a: Operand, b: Operand) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", x, y)
    return _emit(
        "div",
        (x, y),
        x.data / y.data,
        lambda g: (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        ),
    )


def neg(a: Operand) -> Tensor:
    x = as_tensor(a)
    return _emit("neg", (x,), -x.data, lambda g: (-g,))


def square(a: Operand) -> Tensor:
    x = as_tensor(a)
    return _emit("square", (x,), x.data * x.data, lambda g: (2.0 * x.data * g,))


def relu(a: Operand) -> Tensor:
    x = as_tensor(a)
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def gelu(a: Operand) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(a)
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def bw(g: Array) -> tuple[Array]:
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _emit("gelu", (x,), out, bw)


def grad_reverse(a: Operand, lam: float) -> Tensor:
    """Identity forward; backward scales the incoming gradient by ``-lam``."""
    if lam < 0:
        raise InputDomainError(f"grad_reverse expects lambda >= 0, got {lam}")
    x = as_tensor(a)
    return _emit("grad_reverse", (x,), x.data.copy(), lambda g: (-lam * g,))


# --- shape ------------------------------------------------------------------


def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product with numpy batching rules on the leading axes."""
    x, y = as_tensor(a), as_tensor(b)
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {x.shape} and {y.shape}")
    try:
        out = np.matmul(x.data, y.data)
    except ValueError:
        raise ShapeError(
            f"matmul: incompatible batch shapes {x.shape} and {y.shape}"
        ) from None

    def bw(g: Array) -> tuple[Array, Array]:
        ga = np.matmul(g, np.swapaxes(y.data, -1, -2))
        gb = np.matmul(np.swapaxes(x.data, -1, -2), g)
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return _emit("matmul", (x, y), out, bw)


def transpose(a: Operand, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(a)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(int(i) for i in np.argsort(perm))
    return _emit(
        "transpose",
        (x,),
        np.transpose(x.data, perm),
        lambda g: (np.transpose(g, inverse),),
    )


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(a)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def getitem(a: Operand, index: object) -> Tensor:
    x = as_tensor(a)

    def bw(g: Array) -> tuple[Array]:
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)  # type: ignore[arg-type]
        return (full,)

    return _emit("getitem", (x,), np.array(x.data[index]), bw)  # type: ignore[index]


def embedding(table: Operand, ids: npt.ArrayLike) -> Tensor:
    """Rows of ``table`` gathered by integer ``ids`` (any shape)."""
    w = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= w.shape[0]):
        raise InputDomainError(
            f"embedding: ids must lie in [0, {w.shape[0]}), got "
            f"[{idx.min()}, {idx.max()}]"
        )

    def bw(g: Array) -> tuple[Array]:
        full = np.zeros_like(w.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("embedding", (w,), w.data[idx], bw)


# --- reductions ---------------------------------------------------------------


def reduce_sum(a: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g: Array) -> tuple[Array]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", (x,), np.asarray(out), bw)


def mean(a: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(a)
    count = x.data.size if axis is None else x.shape[axis]
    return reduce_sum(x, axis=axis, keepdims=keepdims) / float(count)


# --- normalisation and probabilities ------------------------------------------


def softmax(a: Operand, axis: int = -1) -> Tensor:
    x = as_tensor(a)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit(
        "softmax",
        (x,),
        y,
        lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),),
    )


def _log_softmax(z: Array) -> Array:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(a: Operand, gain: Operand, bias: Operand) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then affine."""
    x, gm, bt = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gm.shape != (d,) or bt.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gm.shape}, {bt.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv_std
    out = xhat * gm.data + bt.data

    def bw(g: Array) -> tuple[Array, Array, Array]:
        dxhat = g * gm.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", (x, gm, bt), out, bw)


def softmax_cross_entropy(logits: Operand, labels: npt.ArrayLike) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    z = as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"cross entropy expects (n, C>=2) logits, got {z.shape}")
    n, c = z.shape
    if y.shape != (n,):
        raise ShapeError(f"cross entropy: {y.shape} labels for {n} rows")
    if n and (y.min() < 0 or y.max() >= c):
        raise InputDomainError(f"cross entropy: labels must lie in [0, {c})")
    logp = _log_softmax(z.data)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    def bw(g: Array) -> tuple[Array]:
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (grad * (g / n),)

    return _emit("softmax_cross_entropy", (z,), np.asarray(loss), bw)


def kl_divergence(
    student_logits: Operand,
    teacher_logits: Operand,
    temperature: float = 1.0,
    direction: KLDirection = "student_teacher",
) -> Tensor:
    """Temperature-scaled distillation divergence, ``T^2`` times the row mean.

    ``student_teacher`` evaluates KL(p_s || p_t); ``teacher_student`` the
    conventional KL(p_t || p_s). The teacher side is always a constant.
    """
    s = as_tensor(student_logits)
    t = as_tensor(teacher_logits).data
    if s.shape != t.shape or s.ndim != 2:
        raise ShapeError(f"kl_divergence: shapes {s.shape} and {t.shape} differ")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    n = s.shape[0]
    scale = temperature * temperature / n
    log_ps = _log_softmax(s.data / temperature)
    log_pt = _log_softmax(t / temperature)
    ps, pt = np.exp(log_ps), np.exp(log_pt)
    if direction == "student_teacher":
        per_row = np.sum(ps * (log_ps - log_pt), axis=-1, keepdims=True)
        dz = ps * ((log_ps - log_pt) - per_row)
    else:
        per_row = np.sum(pt * (log_pt - log_ps), axis=-1, keepdims=True)
        dz = ps - pt
    # Rounding can leave KL(p||p) a hair below zero.
    value = max(float(per_row.sum()) * scale, 0.0)
    return _emit(
        "kl_divergence",
        (s,),
        np.asarray(value),
        lambda g: (dz * (g * scale / temperature),),
    )
