"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks that graph once in reverse topological order, fills
``grad`` on every tensor that requires it, then drops the graph.

Layout convention for image-like data is channels-last ``[n, h, w, c]``.
"""

from __future__ import annotations

import contextlib
import os
from typing import BinaryIO, Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, FormatError, NumericalError, ShapeError

DTYPE = np.float64

_debug = os.environ.get("BACNN_DEBUG", "") not in ("", "0")
_grad_enabled = True


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/Inf and raise :class:`NumericalError`."""
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them on the tape."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if any(e < 1 for e in arr.shape):
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by {op}")


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op output and register it on the tape.

    ``backward_fn`` receives the output gradient and returns one gradient
    (or ``None``) per parent, in order.
    """
    if _debug:
        _check_finite(data, op)
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out.name = None
    out._op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# construction


def create(shape: Sequence[int], fill=0.0, requires_grad: bool = False) -> Tensor:
    """Build a tensor of ``shape`` from a scalar fill or a flat row-major sequence."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(e) for e in shape)
    if any(e < 1 for e in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    if np.ndim(fill) == 0:
        return Tensor(np.full(shape, fill, dtype=DTYPE), requires_grad)
    values = np.asarray(fill, dtype=DTYPE).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ShapeError(f"{values.size} values cannot fill shape {shape} ({expected} elements)")
    return Tensor(values.reshape(shape), requires_grad)


def zeros(shape, requires_grad=False) -> Tensor:
    return create(shape, 0.0, requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return create(shape, 1.0, requires_grad)


def ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


# ---------------------------------------------------------------------------
# differentiable ops


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting.

    A length-``c`` vector against a 4-D ``[n, h, w, c]`` tensor scales each
    channel.
    """
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    return make_result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def spatial_mean(x: Tensor) -> Tensor:
    """Average each channel over its spatial positions: ``[n,h,w,z] -> [n,z]``."""
    if x.ndim != 4:
        raise ShapeError(f"spatial_mean expects a 4-D [n,h,w,z] tensor, got shape {x.shape}")
    n, h, w, z = x.shape
    scale = 1.0 / (h * w)

    def bw(g):
        return (np.broadcast_to(g[:, None, None, :] * scale, x.shape).copy(),)

    return make_result(x.data.mean(axis=(1, 2)), (x,), bw, "spatial_mean")


# ---------------------------------------------------------------------------
# reverse pass


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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Fill ``grad`` on every tensor that requires it, then clear the tape.

    Leaf gradients accumulate across calls until reset with ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None:
        raise ContractError("backward called with an empty tape (no recorded forward pass)")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# dump format: "TEN <ndim> <e1> ... <ek>\n" + little-endian float64, row-major


def dump_tensor(t: Tensor | np.ndarray, fh: BinaryIO) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=DTYPE)
    header = " ".join(["TEN", str(arr.ndim), *map(str, arr.shape)]) + "\n"
    fh.write(header.encode("ascii"))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensor(fh: BinaryIO) -> Tensor:
    line = fh.readline()
    parts = line.decode("ascii", errors="replace").split()
    if not parts or parts[0] != "TEN":
        raise FormatError(f"bad tensor magic: {line[:20]!r}")
    try:
        ndim = int(parts[1])
        shape = tuple(int(e) for e in parts[2:])
    except (IndexError, ValueError):
        raise FormatError(f"malformed tensor header: {line!r}") from None
    if len(shape) != ndim or any(e < 1 for e in shape):
        raise FormatError(f"malformed tensor header: {line!r}")
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError(f"truncated tensor payload: expected {8 * count} bytes, got {len(payload)}")
    return Tensor(np.frombuffer(payload, dtype="<f8").astype(DTYPE).reshape(shape))


def save_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        dump_tensor(t, fh)


def read_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return load_tensor(fh)
