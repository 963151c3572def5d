"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np

from natpert import tensorcore as tc
from natpert.tensorcore import Tensor

FD_STEP = 1e-5


def numeric_grad(f, arrays, i, h=FD_STEP):
    """Central differences of scalar ``f(*arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(*arrays)
        x[idx] = old - h
        fm = f(*arrays)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.abs(a).max(initial=0), np.abs(b).max(initial=0), 1e-8)
    return float(np.abs(a - b).max(initial=0) / scale)


def check_op(op, arrays, weight=None):
    """Max relative error between tape gradients and central differences.

    The checked scalar is ``sum(op(*inputs) * weight)`` with a fixed random
    weight, so every output element contributes with a distinct factor.
    """
    with tc.precision(np.float64):
        def scalar(*arrs):
            with tc.no_grad():
                out = op(*[Tensor(a) for a in arrs])
            return float(np.sum(out.data * weight)) if out.data.ndim else float(out.data)

        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        with tc.Tape():
            out = op(*tensors)
            if out.data.ndim:
                loss = tc.tsum(tc.mul(out, Tensor(weight)))
            else:
                loss = out
            tc.backward(loss)
        errs = [rel_err(t.grad, numeric_grad(scalar, [a.copy() for a in arrays], i))
                for i, t in enumerate(tensors)]
    return max(errs)


def _distinct(rng, shape, spread=1.0):
    """Values with no near-ties (keeps ReLU and max-pool away from kinks)."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) / n * 2 * spread
    vals += rng.uniform(-0.1, 0.1, n) / n * spread
    return vals.reshape(shape).astype(np.float64)


def _cases(name, rng, count=10):
    """``count`` random (inputs, weight-shape) cases for one primitive."""
    out = []
    for _ in range(count):
        if name in ("add", "sub", "mul"):
            shape = tuple(rng.integers(1, 5, rng.integers(1, 4)))
            other = tuple(1 if rng.uniform() < 0.3 else d for d in shape)
            out.append([rng.normal(size=shape), rng.normal(size=other)])
        elif name == "matmul":
            m, k, n = rng.integers(1, 6, 3)
            out.append([rng.normal(size=(m, k)), rng.normal(size=(k, n))])
        elif name == "dense":
            m, k, n = rng.integers(1, 6, 3)
            out.append([rng.normal(size=(m, k)), rng.normal(size=(k, n)), rng.normal(size=n)])
        elif name == "conv2d":
            n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            h, w = rng.integers(2, 7, 2)
            k = int(rng.choice([1, 3, 5]))
            out.append([rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)),
                        rng.normal(size=o)])
        elif name == "relu":
            shape = tuple(rng.integers(1, 6, rng.integers(1, 4)))
            out.append([_distinct(rng, shape)])
        elif name == "maxpool2":
            n, c = rng.integers(1, 3, 2)
            h, w = 2 * rng.integers(1, 4, 2)
            out.append([_distinct(rng, (n, c, h, w))])
        elif name in ("flatten", "reshape", "tsum"):
            shape = tuple(rng.integers(1, 5, rng.integers(2, 5)))
            out.append([rng.normal(size=shape)])
        elif name == "softmax_cross_entropy":
            n, k = rng.integers(1, 6), rng.integers(2, 6)
            out.append([3 * rng.normal(size=(n, k))])
        else:
            raise KeyError(name)
    return out


def _op(name, rng, arrays):
    if name == "add":
        return tc.add
    if name == "sub":
        return tc.sub
    if name == "mul":
        return tc.mul
    if name == "matmul":
        return tc.matmul
    if name == "dense":
        return tc.dense
    if name == "conv2d":
        return tc.conv2d
    if name == "relu":
        return tc.relu
    if name == "maxpool2":
        return tc.maxpool2
    if name == "flatten":
        return tc.flatten
    if name == "reshape":
        return lambda a: tc.reshape(a, (-1,) + a.shape[-1:])
    if name == "tsum":
        return tc.tsum
    if name == "softmax_cross_entropy":
        labels = rng.integers(0, arrays[0].shape[1], arrays[0].shape[0])
        return lambda z: tc.softmax_cross_entropy(z, labels)
    raise KeyError(name)


PRIMITIVES = ("add", "sub", "mul", "matmul", "dense", "conv2d", "relu", "maxpool2",
              "flatten", "reshape", "tsum", "softmax_cross_entropy")


def gradient_suite(name, seed=0, count=10):
    """Relative errors of ``count`` random-shape gradient checks for one primitive."""
    rng = np.random.default_rng([seed, PRIMITIVES.index(name)])
    errs = []
    for arrays in _cases(name, rng, count):
        op = _op(name, rng, arrays)
        with tc.precision(np.float64), tc.no_grad():
            probe = op(*[Tensor(a) for a in arrays])
        weight = rng.normal(size=probe.shape)
        errs.append(check_op(op, arrays, weight))
    return errs


class StubNet:
    """Predicts from a lookup table; used for accuracy and calibration oracles."""

    def __init__(self, predictions, num_classes=10):
        self.predictions = np.asarray(predictions)
        self.num_classes = num_classes

    def logits(self, x, batch_size=500):
        idx = np.asarray(x).reshape(len(x), -1)[:, 0].astype(int)
        out = np.zeros((len(idx), self.num_classes))
        out[np.arange(len(idx)), self.predictions[idx]] = 1.0
        return out


class LinearModel:
    """Two-class linear classifier with logits ``[0, w.x]`` (1-D logistic model)."""

    def __init__(self, w):
        self.params = {"w": Tensor(np.asarray(w, np.float64), requires_grad=True,
                                   dtype=np.float64)}
        self.num_classes = 2

    def forward(self, x, params=None):
        p = self.params if params is None else params
        z1 = tc.matmul(tc.flatten(x), tc.reshape(p["w"], (-1, 1)))
        return tc.dense(z1, Tensor(np.array([[0.0, 1.0]]), dtype=p["w"].dtype))

    def logits(self, x, batch_size=500):
        with tc.no_grad():
            return self.forward(Tensor(np.asarray(x), dtype=np.float64)).data
