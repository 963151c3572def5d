"""
What adversarial training costs
===============================

A clean epoch takes one gradient per minibatch. A PGD epoch with K steps
needs K input gradients to build each adversarial batch plus one parameter
gradient, so it costs K + 1 gradient steps per minibatch. Natural perturbed
training stays at one.
"""

from natpert.adversarial import AttackConfig
from natpert.datasets import synthetic_splits
from natpert.model import SgdConfig, SmallConvNet, init_params
from natpert.perturb import PerturbationSpec
from natpert.schedules import TrainSchedule, train

data = synthetic_splits(256, 32, 32, seed=0)
sgd = SgdConfig(lr=0.01, batch_size=32)


def one_mixed_epoch(regime, **kw):
    net = SmallConvNet(data.image_shape, 3, (8, 16))
    init_params(net, 0)
    clean, mixed = train(net, *data.train, TrainSchedule(regime, 1, 1, sgd, 0, **kw))
    return clean, mixed


print(f"{'regime':<22}{'grad steps':>12}{'seconds':>10}{'x clean':>9}")
for name, regime, kw in [
    ("natural (blur)", "natural", {"specs": (PerturbationSpec("B", 1.0),)}),
    ("adversarial K=5", "adversarial", {"attack": AttackConfig(0.03, steps=5, random_start=True)}),
    ("adversarial K=10", "adversarial", {"attack": AttackConfig(0.03, steps=10, random_start=True)}),
]:
    clean, mixed = one_mixed_epoch(regime, **kw)
    print(f"{name:<22}{mixed.grad_steps:>12}{mixed.seconds:>10.2f}"
          f"{mixed.seconds / clean.seconds:>9.1f}")
