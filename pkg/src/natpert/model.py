"""Small convolutional classifier, He initialisation, momentum SGD, accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


@dataclass
class SmallConvNet:
    """``conv3x3 -> ReLU -> maxpool2`` blocks followed by one dense layer.

    ``conv_channels`` is the architecture descriptor: ``(16, 32)`` is the
    default two-block net, ``()`` degenerates to softmax regression on the
    raw pixels.
    """

    in_shape: tuple = (3, 32, 32)
    num_classes: int = 10
    conv_channels: tuple = (16, 32)
    kernel: int = 3
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.in_shape = tuple(int(d) for d in self.in_shape)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        _, h, w = self.in_shape
        n_pool = len(self.conv_channels)
        if h % 2 ** n_pool or w % 2 ** n_pool:
            raise ValueError(f"input {self.in_shape} not divisible by 2^{n_pool}")

    def descriptor(self) -> dict:
        return {
            "in_shape": list(self.in_shape),
            "num_classes": self.num_classes,
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "SmallConvNet":
        return cls(in_shape=tuple(desc["in_shape"]), num_classes=int(desc["num_classes"]),
                   conv_channels=tuple(desc["conv_channels"]), kernel=int(desc["kernel"]))

    def param_shapes(self) -> dict:
        shapes = {}
        c, h, w = self.in_shape
        for i, f in enumerate(self.conv_channels, start=1):
            shapes[f"conv{i}.w"] = (f, c, self.kernel, self.kernel)
            shapes[f"conv{i}.b"] = (f,)
            c, h, w = f, h // 2, w // 2
        shapes["fc.w"] = (c * h * w, self.num_classes)
        shapes["fc.b"] = (self.num_classes,)
        return shapes

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def forward(self, x: Tensor, params: dict | None = None) -> Tensor:
        p = self.params if params is None else params
        if x.data.ndim != 4 or tuple(x.shape[1:]) != self.in_shape:
            raise tc.ShapeError("SmallConvNet.forward", x.shape, (None,) + self.in_shape)
        h = x
        for i in range(1, len(self.conv_channels) + 1):
            h = tc.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            h = tc.maxpool2(tc.relu(h))
        return tc.dense(tc.flatten(h), p["fc.w"], p["fc.b"])

    def logits(self, x, batch_size: int = 500) -> np.ndarray:
        """Evaluation-mode logits as a numpy array."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        dtype = next(iter(self.params.values())).dtype
        out = []
        with tc.no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.forward(Tensor(x[i:i + batch_size], dtype=dtype)).data)
        return np.concatenate(out) if out else np.zeros((0, self.num_classes), dtype)

    def copy(self) -> "SmallConvNet":
        net = SmallConvNet(self.in_shape, self.num_classes, self.conv_channels, self.kernel)
        net.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return net


def init_params(net: SmallConvNet, seed: int, dtype=np.float32) -> dict:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases.

    The parameters are also attached to ``net``.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in net.param_shapes().items():
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, dtype=dtype)
    net.params = params
    return params


def predict(net, images, batch_size: int = 500) -> np.ndarray:
    """Argmax class per image; ties go to the smallest class index."""
    return np.argmax(net.logits(images, batch_size=batch_size), axis=1)


def accuracy(net, images, labels, batch_size: int = 500) -> float:
    """Percentage of images whose argmax logit equals the label.

    ``net`` is anything with a ``logits(images) -> (N, K)`` method.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    correct = 0
    for i in range(0, len(labels), batch_size):
        pred = predict(net, images[i:i + batch_size], batch_size=batch_size)
        correct += int(np.sum(pred == labels[i:i + batch_size]))
    return 100.0 * correct / len(labels)


@dataclass
class SgdConfig:
    """Momentum SGD with a step-decay schedule."""

    lr: float = 0.05
    momentum: float = 0.9
    milestones: tuple = ()
    gamma: float = 0.1
    batch_size: int = 64

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("decay multiplier must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.lr * self.gamma ** sum(epoch >= m for m in self.milestones)


def sgd_step(params: dict, config: SgdConfig, state: dict, lr: float | None = None) -> dict:
    """One classic momentum update, ``v = mu*v + g; theta -= lr*v``.

    ``state`` holds the velocity buffers and is updated in place. Gradients
    are cleared after the step.
    """
    lr = config.lr if lr is None else lr
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    for name, p in params.items():
        g = p.grad
        if config.momentum:
            v = state.get(name)
            v = g.copy() if v is None else config.momentum * v + g
            state[name] = v.astype(p.dtype, copy=False)
            g = state[name]
        p.data = (p.data - p.dtype.type(lr) * g).astype(p.dtype, copy=False)
        p.zero_grad()
    return params
