"""Small reverse-mode automatic differentiation engine over float64 numpy arrays.

Every operation records its parents and a closure mapping the output
gradient to parent gradients. ``Tensor.backward`` walks that record in
reverse topological order and accumulates into leaf tensors that were
created with ``requires_grad=True``.
"""

from __future__ import annotations

import contextlib
import math
import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CheckpointError, DomainError, MissingGradientError, ShapeError

EPS = 1e-7

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def _from_op(cls, data, parents: Sequence[Tensor], backward) -> Tensor:
        out = cls.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._from_op(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._from_op(
            x / y,
            (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        x = self.data
        return Tensor._from_op(x**exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        x, y = self.data, other.data
        return Tensor._from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g))

    # reductions and shape ops

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self):
        return Tensor._from_op(self.data.T, (self,), lambda g: (g.T,))

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(np.asarray(self.data[index]), (self,), backward)

    # elementwise functions

    def exp(self):
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self.data
        return Tensor._from_op(np.log(x), (self,), lambda g: (g / x,))

    def abs(self):
        x = self.data
        return Tensor._from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def square(self):
        x = self.data
        return Tensor._from_op(x * x, (self,), lambda g: (2.0 * g * x,))

    def clip(self, lo: float, hi: float):
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor._from_op(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))


class Parameter(Tensor):
    """Trainable leaf tensor with a dotted name such as ``g1.layer0.weight``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (B, I), weight (I, O), bias (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not conform to weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    return Tensor._from_op(
        xd @ wd + bias.data,
        (x, weight, bias),
        lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
    )


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    xd = x.data
    slope = np.where(xd > 0, 1.0, alpha)
    return Tensor._from_op(xd * slope, (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # Split by sign so neither branch overflows in exp.
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def reconstruction_distance(a: Tensor, b: Tensor, metric: str = "l1") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"reconstruction_distance: shapes differ {a.shape} vs {b.shape}")
    diff = a - b
    if metric == "l1":
        return diff.abs().mean()
    if metric == "l2":
        return diff.square().mean()
    raise ValueError(f"unknown distance metric {metric!r}")


def _check_scores(score: Tensor, what: str) -> None:
    d = score.data
    if not np.all(np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise DomainError(f"{what} must lie in [0, 1], got {d.ravel()[:4]}")


def bce_discriminator_loss(score_fake, score_real) -> Tensor:
    """``-log(1 - D(fake)) - log(D(real))`` averaged over the batch."""
    score_fake, score_real = as_tensor(score_fake), as_tensor(score_real)
    _check_scores(score_fake, "score_fake")
    _check_scores(score_real, "score_real")
    fake_term = -(1.0 - score_fake.clip(EPS, 1.0 - EPS)).log().mean()
    real_term = -score_real.clip(EPS, 1.0 - EPS).log().mean()
    return fake_term + real_term


def adversarial_generator_loss(score_fake) -> Tensor:
    """Non-saturating generator objective ``-log D(fake)``."""
    score_fake = as_tensor(score_fake)
    _check_scores(score_fake, "score_fake")
    return -score_fake.clip(EPS, 1.0 - EPS).log().mean()


# optimizers


class Optimizer:
    def __init__(self, parameters: Iterable[Parameter], learning_rate: float):
        if not learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for p in self.parameters:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name} has no gradient; run backward() first")
            grads.append(p.grad)
        return grads

    def step(self) -> None:
        grads = self._grads()
        self.step_count += 1
        for p, g in zip(self.parameters, grads):
            self._update(p, g)
        self.zero_grad()

    def _update(self, p: Parameter, g: np.ndarray) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"step": np.array([float(self.step_count)])}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])


class SGD(Optimizer):
    def _update(self, p, g):
        p.data -= self.learning_rate * g


class Adam(Optimizer):
    def __init__(self, parameters, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(parameters, learning_rate)
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError(f"Adam betas must lie in (0, 1), got {beta1}, {beta2}")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.parameters}
        self.v = {p.name: np.zeros_like(p.data) for p in self.parameters}

    def step(self) -> None:
        grads = self._grads()
        self.step_count += 1
        t = self.step_count
        # Bias corrections folded into the step size; algebraically identical
        # to dividing m and v by (1 - beta**t).
        c2 = math.sqrt(1.0 - self.beta2**t)
        step_size = self.learning_rate * c2 / (1.0 - self.beta1**t)
        eps = self.eps * c2
        for p, g in zip(self.parameters, grads):
            m, v = self.m[p.name], self.v[p.name]
            buf = np.multiply(g, 1.0 - self.beta1)
            m *= self.beta1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v *= self.beta2
            v += buf
            np.sqrt(v, out=buf)
            buf += eps
            np.divide(m, buf, out=buf)
            buf *= step_size
            p.data -= buf
        self.zero_grad()

    def state_dict(self):
        state = super().state_dict()
        for name in self.m:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        for name in self.m:
            self.m[name][...] = state[f"m.{name}"]
            self.v[name][...] = state[f"v.{name}"]


# gradient checking


def numerical_gradient(closure: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``closure()`` with respect to every entry of ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = closure().item()
            flat[i] = orig - eps
            down = closure().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    closure: Callable[[], Tensor],
    parameters: Sequence[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    names: Sequence[str] | None = None,
) -> dict:
    """Compare backward() gradients of a scalar closure against central differences.

    Returns ``{"errors": {name: max relative error}, "max_error": float, "passed": bool}``.
    """
    for p in parameters:
        p.grad = None
    closure().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in parameters]
    if names is None:
        names = [getattr(p, "name", f"param{i}") for i, p in enumerate(parameters)]
    errors = {}
    for name, p, a in zip(names, parameters, analytic):
        n = numerical_gradient(closure, p, eps)
        errors[name] = float(relative_error(a, n).max()) if a.size else 0.0
        p.grad = None
    worst = max(errors.values(), default=0.0)
    return {"errors": errors, "max_error": worst, "passed": worst < tolerance}


# checkpoints

CHECKPOINT_MAGIC = b"LFCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, entries: Mapping[str, np.ndarray]) -> None:
    """Write ``(name, shape, float64 data)`` triples in a little-endian binary container."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<BI", CHECKPOINT_VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a layoutforge checkpoint")
    try:
        version, count = struct.unpack_from("<BI", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        offset = 9
        entries = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, offset)
            offset += 2
            name = buf[offset : offset + nlen].decode("utf-8")
            offset += nlen
            (ndim,) = struct.unpack_from("<B", buf, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, offset)
            offset += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * n > len(buf):
                raise CheckpointError("truncated data block")
            entries[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return entries
