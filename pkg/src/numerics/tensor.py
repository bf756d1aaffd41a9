"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a row-major `numpy.ndarray` of 64-bit floats. Every public
operation in this module returns a new tensor and, when gradient recording is
enabled and any input requires a gradient, remembers its inputs together with a
closure that maps the output gradient to input gradients. `Tensor.backward`
walks that record in reverse topological order and accumulates `grad` on the
leaf tensors that asked for one.

Broadcasting is limited to what training needs: leading batch axes on
`matmul`, trailing bias vectors, and scalars.
"""

from __future__ import annotations

import math
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager

import numpy as np

from src.errors import DimensionError, ParameterError

_grad_mode = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

GELU_C = math.sqrt(2.0 / math.pi)


def is_grad_enabled() -> bool:
    """Return whether operations on this thread are recorded for backward."""
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread for the duration of the block."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot.

    Attributes:
        data (np.ndarray): The values, always float64.
        grad (np.ndarray | None): Accumulated d(loss)/d(self) after `backward`, leaves only.
        requires_grad (bool): Whether gradients flow to (or through) this tensor.
        op (str): Name of the operation that produced the tensor, "leaf" for inputs.
    """

    __slots__ = ("_backward", "_parents", "data", "grad", "op", "requires_grad")

    def __init__(self, data: object, *, requires_grad: bool = False) -> None:
        """Creates a leaf tensor holding a float64 copy of `data`.

        Args:
            data: Anything `numpy.array` accepts.
            requires_grad (bool): Whether `backward` should populate `grad`.
        """
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def _result(
        cls,
        data: np.ndarray,
        parents: tuple[Tensor, ...],
        backward: BackwardFn,
        op: str,
    ) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        tracked = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        out._parents = parents if tracked else ()
        out._backward = backward if tracked else None
        return out

    def __repr__(self) -> str:
        """Returns a short description with shape and producing op."""
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        """The tensor shape."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """The number of axes."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """The number of elements."""
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        """True for tensors not produced by a recorded operation."""
        return self._backward is None

    def item(self) -> float:
        """Returns the value of a single-element tensor as a float."""
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        """Returns the underlying array (not a copy)."""
        return self.data

    def detach(self) -> Tensor:
        """Returns a constant tensor sharing this tensor's values."""
        return _constant(self.data)

    def zero_grad(self) -> None:
        """Clears the accumulated gradient."""
        self.grad = None

    # -- Operators ------------------------------------------------------------

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, other)

    def __radd__(self, other: float) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Tensor | float) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __pow__(self, exponent: float) -> Tensor:
        return power(self, exponent)

    # -- Backward -------------------------------------------------------------

    def backward(self) -> None:
        """Populates `grad` on every participating leaf with d(self)/d(leaf).

        Raises:
            DimensionError: If this tensor is not a scalar.
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward needs a scalar loss, got shape {self.shape}",
            )
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(
                node._parents,
                node._backward(g),
                strict=True,
            ):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in visited)
        return order


# --Helpers-----------------------------------------------------------------


def _constant(data: np.ndarray | float) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.op = "const"
    return out


def as_tensor(value: Tensor | np.ndarray | float) -> Tensor:
    """Wraps arrays and scalars as constant tensors; tensors pass through."""
    return value if isinstance(value, Tensor) else _constant(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast",
        ) from None


# --Elementwise arithmetic----------------------------------------------------


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Elementwise a + b."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Elementwise a - b."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Elementwise a * b."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a: Tensor | float, b: Tensor | float) -> Tensor:
    """Elementwise a / b."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor._result(a.data / b.data, (a, b), backward, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise x ** exponent for a constant exponent."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * exponent * x.data ** (exponent - 1),)

    return Tensor._result(x.data**exponent, (x,), backward, "pow")


def exp(x: Tensor) -> Tensor:
    """Elementwise exponential."""
    out_data = np.exp(x.data)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out_data,)

    return Tensor._result(out_data, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    """Elementwise natural logarithm."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g / x.data,)

    return Tensor._result(np.log(x.data), (x,), backward, "log")


def tanh(x: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    out_data = np.tanh(x.data)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (1.0 - out_data * out_data),)

    return Tensor._result(out_data, (x,), backward, "tanh")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0)."""
    active = x.data > 0

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * active,)

    return Tensor._result(np.where(active, x.data, 0.0), (x,), backward, "relu")


def gelu(x: Tensor) -> Tensor:
    """Elementwise GELU, tanh approximation."""
    inner = GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(inner)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        d_inner = GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return Tensor._result(0.5 * x.data * (1.0 + t), (x,), backward, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function."""
    out_data = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out_data * (1.0 - out_data),)

    return Tensor._result(out_data, (x,), backward, "sigmoid")


# --Shape and reduction-----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with optional leading batch axes.

    Supports (m×k)·(k×n), batched (...×m×k)·(k×n) or (...×m×k)·(...×k×n), and
    matrix × vector (...×m×k)·(k).

    Raises:
        DimensionError: If the inner dimensions differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError(f"matmul needs arrays, got shapes {a.shape} and {b.shape}")
    if b.ndim == 1:
        if a.shape[-1] != b.shape[0]:
            raise DimensionError(
                f"matmul inner dimensions differ: {a.shape} x {b.shape}",
            )
        column = reshape(b, (b.shape[0], 1))
        return reshape(matmul(a, column), a.shape[:-1])
    if a.ndim == 1:
        row = reshape(a, (1, a.shape[0]))
        out = matmul(row, b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor._result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permutes axes; reverses them when `axes` is None."""
    perm = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(g, inverse),)

    return Tensor._result(np.transpose(x.data, perm), (x,), backward, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Returns the same values with a new shape.

    Raises:
        DimensionError: If the element counts differ.
    """
    try:
        out_data = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return Tensor._result(out_data, (x,), backward, "reshape")


def sum_(x: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    """Sums over `axis`, or over everything when `axis` is None."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, x.shape)),)

    return Tensor._result(
        np.sum(x.data, axis=axis, keepdims=keepdims),
        (x,),
        backward,
        "sum",
    )


def mean(x: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over `axis`, or over everything when `axis` is None."""
    count = x.size if axis is None else x.shape[axis]
    return sum_(x, axis, keepdims=keepdims) / float(count)


# --Neural network building blocks--------------------------------------------


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where `mask` is False get probability 0."""
    scores = x.data if mask is None else np.where(mask, x.data, -np.inf)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor._result(out_data, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalizes the last axis to zero mean and unit variance, then scales and shifts."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    n = x.shape[-1]

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_hat = g * gamma.data
        grad_x = (
            inv_std
            / n
            * (
                n * d_hat
                - d_hat.sum(axis=-1, keepdims=True)
                - x_hat * (d_hat * x_hat).sum(axis=-1, keepdims=True)
            )
        )
        return (
            grad_x,
            _unbroadcast(g * x_hat, gamma.shape),
            _unbroadcast(g, beta.shape),
        )

    return Tensor._result(
        x_hat * gamma.data + beta.data,
        (x, gamma, beta),
        backward,
        "layer_norm",
    )


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Gathers rows of `weight` at integer `ids`; output shape is ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (grad,)

    return Tensor._result(weight.data[ids], (weight,), backward, "embedding")


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Mean next-token cross-entropy over the positions where `mask` is set.

    Args:
        logits (Tensor): Unnormalized scores, shape (..., vocab).
        targets (np.ndarray): Integer class ids, shape (...).
        mask (np.ndarray | None): Positions that count towards the mean.

    Returns:
        Tensor: A scalar.
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = max(weights.sum(), 1.0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * weights).sum() / count

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        np.put_along_axis(
            grad,
            targets[..., None],
            np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        return (grad * (weights / count)[..., None] * g,)

    return Tensor._result(np.array(loss), (logits,), backward, "cross_entropy")


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 `labels`."""
    y = np.asarray(labels, dtype=np.float64)
    x = logits.data
    loss = np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x))))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        p = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g * (p - y) / y.size,)

    return Tensor._result(np.array(loss), (logits,), backward, "bce_with_logits")


def topk_indices(
    values: np.ndarray,
    k: int,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """Boolean mask of the k largest entries along the last axis.

    Ties are broken towards the lowest index. Entries outside `allowed` are
    never selected, so fewer than k may be set when `allowed` is sparse.

    Raises:
        ParameterError: If k is outside [1, h].
    """
    h = values.shape[-1]
    if not 1 <= k <= h:
        raise ParameterError(f"top-k needs 1 <= k <= {h}, got k={k}")
    scores = values if allowed is None else np.where(allowed, values, -np.inf)
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    keep = np.zeros(values.shape, dtype=bool)
    np.put_along_axis(keep, order, values=True, axis=-1)
    if allowed is not None:
        keep &= np.broadcast_to(allowed, values.shape)
    return keep


def topk_mask(x: Tensor, k: int, allowed: np.ndarray | None = None) -> Tensor:
    """Keeps the k largest-valued entries along the last axis and zeroes the rest.

    The gradient passes straight through the surviving entries; zeroed entries
    receive no gradient.

    Args:
        x (Tensor): Input of shape (..., h).
        k (int): Number of entries to keep, 1 <= k <= h.
        allowed (np.ndarray | None): Optional boolean mask restricting which
            entries may be selected.

    Returns:
        Tensor: Same shape as `x` with at most k nonzeros per row.
    """
    keep = topk_indices(x.data, k, allowed)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * keep,)

    return Tensor._result(np.where(keep, x.data, 0.0), (x,), backward, "topk_mask")


# --Gradient checking-------------------------------------------------------


def gradcheck(
    fn: Callable[..., Tensor],
    *arrays: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Compares reverse-mode gradients with central finite differences.

    Args:
        fn: Maps tensors (one per array) to a scalar tensor.
        *arrays: Points at which to evaluate the gradient.
        eps (float): Finite-difference step.

    Returns:
        float: The worst relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
        over all inputs.
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    fn(*leaves).backward()
    worst = 0.0
    for position, leaf in enumerate(leaves):
        base = np.array(arrays[position], dtype=np.float64)
        numeric = np.zeros_like(base)
        for i in range(base.size):
            values = []
            for step in (eps, -eps):
                shifted = base.copy()
                shifted.flat[i] += step
                inputs = [
                    Tensor(shifted if j == position else arrays[j]) for j in range(len(arrays))
                ]
                with no_grad():
                    values.append(fn(*inputs).item())
            numeric.flat[i] = (values[0] - values[1]) / (2 * eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
