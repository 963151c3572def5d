"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of primitives a small CNN needs are provided: elementwise
add/sub/mul, matmul, "same" 2-D convolution, ReLU, 2x2 max-pooling, flatten,
dense layers and mean softmax cross-entropy. Every op that touches a tensor
with ``requires_grad`` appends a node to the active :class:`Tape`; calling
:func:`backward` walks that tape once, newest node first.

Training runs in float32. Wrap code in ``with precision(np.float64):`` to get
float64 tensors for gradient verification.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class GradError(RuntimeError):
    """Misuse of the differentiation machinery."""


_DEFAULT_DTYPE = [np.dtype(np.float32)]
_GRAD_ENABLED = [True]
_BACKWARD_CALLS = [0]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for freshly created tensors."""
    _DEFAULT_DTYPE.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (evaluation, attack bookkeeping)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def backward_calls() -> int:
    """Number of completed :func:`backward` passes since import."""
    return _BACKWARD_CALLS[0]


class Tensor:
    """A dense array that may participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "_grad", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        # new tensors follow the active precision unless told otherwise
        self.data = np.asarray(data, dtype=default_dtype() if dtype is None else dtype,
                               order="C")
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._tape = None
        self._index = -1

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    @property
    def grad(self):
        if not self.requires_grad:
            raise GradError("tensor does not require grad (detached)")
        return self._grad

    @grad.setter
    def grad(self, value):
        if value is not None:
            value = np.asarray(value, dtype=self.data.dtype)
            if value.shape != self.data.shape:
                raise ShapeError("grad", value.shape, self.data.shape)
        self._grad = value

    def zero_grad(self):
        self._grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a Python scalar")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as ops run, so construction order is already a
    topological order. A tape can be differentiated once; afterwards it is
    marked consumed and further ops start a fresh tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out: Tensor, parents: Sequence[Tensor], vjp: Callable):
        if self.consumed:
            raise GradError("cannot record onto a consumed tape")
        out.requires_grad = True
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(out, tuple(parents), vjp))


_TAPES: list[Tape] = []
_IMPLICIT = [Tape()]


def current_tape() -> Tape:
    if _TAPES:
        return _TAPES[-1]
    if _IMPLICIT[0].consumed:
        _IMPLICIT[0] = Tape()
    return _IMPLICIT[0]


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        current_tape().record(out, parents, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product; either operand may be a Python scalar."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = _as_tensor(a)
        c = a.data.dtype.type(b)
        return _make(a.data * c, (a,), lambda g: (g * c,))
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape),
                            _unbroadcast(g * ad, bd.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tsum(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    return _make(np.asarray(a.data.sum(), dtype=dtype), (a,),
                 lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                 lambda g: (g * mask,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis but the first."""
    if a.data.ndim < 1:
        raise ShapeError("flatten", a.shape)
    return reshape(a, (a.shape[0], -1))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine layer ``x @ w + b`` with ``w`` of shape (in, out)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("dense", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("dense", w.shape, b.shape)
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is None:
        return _make(out, (x, w), lambda g: (g @ wd.T, xd.T @ g))
    return _make(out + b.data, (x, w, b),
                 lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    # (N, C, H+k-1, W+k-1) -> (N*H*W, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding to the input size.

    ``x`` is (N, C, H, W), ``w`` is (F, C, k, k) with odd ``k``.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    f, c, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (f,):
        raise ShapeError("conv2d", w.shape, b.shape)
    k, p = kh, kh // 2
    n, _, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, h, wd)
    wmat = w.data.reshape(f, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, h, wd, f).transpose(0, 3, 1, 2))

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (gm.T @ cols).reshape(w.shape)
        gcols = (gm @ wmat).reshape(n, h, wd, c, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + h, j:j + wd] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + wd]
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, vjp)


def maxpool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max-pooling; ties route gradient to the first max."""
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("maxpool2", x.shape)
    n, c, h, w = x.shape
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gw.reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), vjp)


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a numpy array or tensor (no recording)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])
    dtype = logits.dtype

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1
        return ((p * (g / n)).astype(dtype),)

    return _make(np.asarray(loss, dtype=dtype), (logits,), vjp)


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that contributed to ``loss``.

    Leaf gradients accumulate; the tape is consumed by the call.
    """
    if loss.size != 1 or loss.data.ndim != 0:
        raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise GradError("loss was not recorded on any tape")
    if tape.consumed:
        raise GradError("backward already called for this tape")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(tape.nodes[: loss._index + 1]):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent._tape is None:
                parent._grad = pg.copy() if parent._grad is None else parent._grad + pg
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    tape.nodes.clear()
    _BACKWARD_CALLS[0] += 1


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def grad_wrt_input(model, x, y) -> Tensor:
    """Gradient of the mean cross-entropy with respect to the input images.

    The model's own parameters are swapped for detached copies during the
    call, so their ``.grad`` buffers are never touched.
    """
    y = np.asarray(y)
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    frozen = {name: p.detach() for name, p in model.params.items()}
    xt = Tensor(xd, requires_grad=True, dtype=_param_dtype(frozen, xd))
    with Tape():
        loss = softmax_cross_entropy(model.forward(xt, params=frozen), y)
        backward(loss)
    return Tensor(xt.grad)


def _param_dtype(params: dict, x: np.ndarray):
    for p in params.values():
        return p.dtype
    return x.dtype if x.dtype.kind == "f" else default_dtype()
