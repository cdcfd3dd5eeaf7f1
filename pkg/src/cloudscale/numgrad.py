"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every value is a float64 matrix. Gradients are recorded on an explicit
:class:`GradientTape` created by the caller; there is no global tape.
Tensors created with ``tape.watch(...)`` are the trainable parameters, and
any op touching a taped tensor is recorded on that same tape.

    tape = GradientTape()
    w = tape.watch(np.ones((2, 2)))
    loss = sum_all(matmul(x, w))
    grads = backward(loss, tape)     # {w: Tensor}
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "GradientTape",
    "as_tensor",
    "matmul",
    "add",
    "apply_activation",
    "softmax_rows",
    "mse",
    "scale",
    "sum_all",
    "concat_cols",
    "reshape",
    "transpose",
    "backward",
    "finite_diff_check",
    "Adam",
]

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    pass


class Tensor:
    """A row-major float64 matrix, optionally living on a gradient tape.

    Equality and hashing are by identity so tensors can key gradient maps.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: GradientTape | None = None, node: int | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def tape_id(self) -> int | None:
        return None if self.tape is None else id(self.tape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.rows}x{self.cols}")
        return float(self.data[0, 0])

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __repr__(self) -> str:
        taped = "" if self.tape is None else f", node={self.node}"
        return f"Tensor({self.rows}x{self.cols}{taped})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "vjp")

    def __init__(self, inputs: tuple[Tensor, ...], vjp):
        self.inputs = inputs
        self.vjp = vjp


class GradientTape:
    """Ordered record of primitive ops for one backward pass.

    Nodes are appended as ops run, so inputs always precede their outputs.
    """

    def __init__(self):
        self.nodes: list[_Node | None] = []
        self.parameters: list[Tensor] = []

    def watch(self, value) -> Tensor:
        """Register ``value`` as a trainable parameter and return its tensor."""
        t = Tensor(value.data if isinstance(value, Tensor) else value, self, len(self.nodes))
        self.nodes.append(None)  # leaf
        self.parameters.append(t)
        return t

    def _record(self, data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.tape = self
        out.node = len(self.nodes)
        self.nodes.append(_Node(inputs, vjp))
        return out


def _tape_of(*xs: Tensor) -> GradientTape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("inputs belong to different gradient tapes")
            tape = x.tape
    return tape


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.tape = None
        out.node = None
        return out
    return tape._record(data, inputs, vjp)


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1xn bias row added to every row of ``a``."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.rows == 1 and b.cols == a.cols:
        return _result(
            a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True))
        )
    raise ShapeError(f"cannot add {a.rows}x{a.cols} and {b.rows}x{b.cols}")


def apply_activation(x: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return _result(x.data.copy(), (x,), lambda g: (g,))
    if kind == "relu":
        mask = x.data > 0
        return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    if kind == "tanh":
        y = np.tanh(x.data)
        return _result(y, (x,), lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax_rows(x: Tensor) -> Tensor:
    if x.cols < 1:
        raise ShapeError("softmax_rows needs at least one column")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), vjp)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences, as a 1x1 tensor."""
    if a.shape != b.shape:
        raise ShapeError(f"mse operands differ: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")
    diff = a.data - b.data
    n = diff.size
    val = np.array([[np.mean(diff * diff)]])

    def vjp(g):
        ga = g[0, 0] * 2.0 / n * diff
        return (ga, -ga)

    return _result(val, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(
        np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),)
    )


def concat_cols(*xs: Tensor) -> Tensor:
    rows = xs[0].rows
    for x in xs:
        if x.rows != rows:
            raise ShapeError(
                "concat_cols row counts differ: "
                + ", ".join(f"{t.rows}x{t.cols}" for t in xs)
            )
    bounds = np.cumsum([0] + [x.cols for x in xs])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _result(np.hstack([x.data for x in xs]), tuple(xs), vjp)


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    """Row-major reshape."""
    if rows * cols != x.data.size:
        raise ShapeError(f"cannot reshape {x.rows}x{x.cols} to {rows}x{cols}")
    shape = x.shape
    return _result(x.data.reshape(rows, cols), (x,), lambda g: (g.reshape(shape),))


def transpose(x: Tensor) -> Tensor:
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,))


# -- differentiation ----------------------------------------------------------


def backward(loss: Tensor, tape: GradientTape) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``loss`` with respect to every watched parameter."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got {loss.rows}x{loss.cols}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
    for idx in range(loss.node, -1, -1):
        node = tape.nodes[idx]
        g = grads.get(idx)
        if node is None or g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp.tape is not tape:
                continue
            prev = grads.get(inp.node)
            grads[inp.node] = gi if prev is None else prev + gi
        del grads[idx]

    out = {}
    for p in tape.parameters:
        g = grads.get(p.node)
        out[p] = Tensor(np.zeros(p.shape) if g is None else g)
    return out


def finite_diff_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps a list of parameter tensors to a scalar tensor. The relative
    error of each entry is ``|analytic - numeric| / max(|analytic|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]

    tape = GradientTape()
    watched = [tape.watch(p) for p in params]
    out = f(watched)
    # a result that never touched the tape does not depend on the parameters
    grads = backward(out, tape) if out.tape is tape else {w: Tensor(np.zeros(w.shape)) for w in watched}

    worst = 0.0
    for k, p in enumerate(params):
        analytic = grads[watched[k]].data
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = f([Tensor(q) for q in params]).item()
            p[idx] = orig - h
            down = f([Tensor(q) for q in params]).item()
            p[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), 1e-8)
            worst = max(worst, err)
    return worst


class Adam:
    """Adam over a dict of named numpy arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = state["lr"]
        self.t = state["t"]
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
