"""Training regimes.

All regimes share one loop: ``n1`` clean epochs followed by ``n2`` mixed
epochs. What a mixed epoch optimises depends on the regime:

* ``standard``     -- clean loss only (``n2`` must be 0)
* ``augment``      -- perturbed loss only, in every epoch (no clean term)
* ``natural``      -- ``(L_clean + L_perturbed) / 2``
* ``multi``        -- as ``natural`` with several perturbations composed per image
* ``adversarial``  -- ``L_clean + L_pgd`` (summed, not averaged)

Perturbations and PGD examples are regenerated for every minibatch, so each
epoch sees fresh draws.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import perturb as pt
from . import tensorcore as tc
from .adversarial import AttackConfig, pgd_example
from .model import SgdConfig, SmallConvNet, accuracy, sgd_step
from .tensorcore import Tensor

log = logging.getLogger(__name__)

REGIMES = ("standard", "augment", "natural", "adversarial", "multi")


@dataclass
class TrainSchedule:
    regime: str = "standard"
    n1: int = 10
    n2: int = 0
    sgd: SgdConfig = field(default_factory=SgdConfig)
    seed: int = 0
    specs: tuple = ()
    attack: AttackConfig | None = None

    def __post_init__(self):
        self.specs = tuple(self.specs)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.n1 < 0 or self.n2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.regime == "standard" and self.n2 != 0:
            raise ValueError("standard training has no mixed epochs (n2 must be 0)")
        if self.regime in ("natural", "augment") and len(self.specs) != 1:
            raise ValueError(f"{self.regime} training needs exactly one perturbation spec")
        if self.regime == "multi" and len(self.specs) < 2:
            raise ValueError("multi-perturbation training needs at least two specs")
        if self.regime == "adversarial":
            if self.attack is None:
                raise ValueError("adversarial training needs an AttackConfig")
            if not self.attack.random_start:
                raise ValueError("adversarial training uses PGD (random_start=True)")

    @property
    def epochs(self) -> int:
        return self.n1 + self.n2

    @property
    def train_kinds(self) -> str:
        if self.regime == "adversarial":
            return "A"
        if self.regime == "standard":
            return ""
        return "".join(s.kind for s in self.specs)


@dataclass
class EpochLog:
    epoch: int
    regime: str
    loss_clean: float
    loss_perturbed: float
    val_accuracy: float
    seconds: float
    grad_steps: int
    mixed: bool


@dataclass
class TrainState:
    """Everything needed to resume: next epoch and momentum buffers."""

    epoch: int = 0
    momentum: dict = field(default_factory=dict)


def _epoch_seed(seed: int, epoch: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch), stream]).generate_state(1)[0])


def train(net: SmallConvNet, images, labels, schedule: TrainSchedule, val=None,
          state: TrainState | None = None, on_epoch=None) -> list:
    """Run ``schedule`` on ``net`` in place and return the per-epoch log.

    ``val`` is an optional ``(images, labels)`` pair for the logged accuracy.
    ``on_epoch(net, state, entry)`` is called at each epoch boundary (used for
    checkpointing).
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    state = state or TrainState()
    sgd, regime = schedule.sgd, schedule.regime
    params = net.params
    n = len(labels)
    history = []
    for epoch in range(state.epoch, schedule.epochs):
        mixed = epoch >= schedule.n1 and regime != "standard"
        lr = sgd.lr_at(epoch)
        order = np.random.default_rng(_epoch_seed(schedule.seed, epoch, 0)).permutation(n)
        pert_seed = _epoch_seed(schedule.seed, epoch, 1)
        attack_rng = np.random.default_rng(_epoch_seed(schedule.seed, epoch, 2))
        calls0 = tc.backward_calls()
        t0 = time.perf_counter()
        sum_clean = sum_pert = 0.0
        for start in range(0, n, sgd.batch_size):
            idx = order[start:start + sgd.batch_size]
            xb, yb = images[idx], labels[idx]
            if regime == "augment":
                xb = pt.apply_batch(schedule.specs[0], xb, pert_seed, idx)
            with tc.Tape():
                loss_c = tc.softmax_cross_entropy(net.forward(Tensor(xb)), yb)
                loss = loss_c
                if mixed and regime != "augment":
                    xp = _perturbed_batch(net, xb, yb, idx, schedule, pert_seed, attack_rng)
                    loss_p = tc.softmax_cross_entropy(net.forward(Tensor(xp)), yb)
                    loss = loss_c + loss_p
                    if regime != "adversarial":
                        loss = loss * 0.5
                    sum_pert += float(loss_p.data) * len(idx)
                tc.backward(loss)
            sgd_step(params, sgd, state.momentum, lr)
            sum_clean += float(loss_c.data) * len(idx)
        seconds = time.perf_counter() - t0
        val_acc = accuracy(net, *val) if val is not None else float("nan")
        entry = EpochLog(epoch + 1, regime,
                         sum_clean / n if n else float("nan"),
                         sum_pert / n if mixed and regime != "augment" else float("nan"),
                         val_acc, seconds, tc.backward_calls() - calls0, mixed)
        if regime == "augment":
            entry.loss_perturbed, entry.loss_clean = entry.loss_clean, float("nan")
        history.append(entry)
        state.epoch = epoch + 1
        log.info("epoch %d/%d %s loss=%.4f val=%.2f (%.1fs)", epoch + 1, schedule.epochs,
                 regime, sum_clean / max(n, 1), val_acc, seconds)
        if on_epoch is not None:
            on_epoch(net, state, entry)
    return history


def _perturbed_batch(net, xb, yb, idx, schedule, pert_seed, attack_rng):
    if schedule.regime == "natural":
        return pt.apply_batch(schedule.specs[0], xb, pert_seed, idx)
    if schedule.regime == "multi":
        return pt.compose_batch(schedule.specs, xb, pert_seed, idx)
    return pgd_example(net, xb, yb, schedule.attack, attack_rng, batch_size=len(xb))


def standard_train(net, images, labels, schedule: TrainSchedule, **kw) -> list:
    if schedule.regime != "standard":
        raise ValueError("standard_train needs regime='standard'")
    return train(net, images, labels, schedule, **kw)


def natural_perturbed_train(net, images, labels, schedule: TrainSchedule, **kw) -> list:
    if schedule.regime != "natural":
        raise ValueError("natural_perturbed_train needs regime='natural'")
    return train(net, images, labels, schedule, **kw)


def adversarial_train(net, images, labels, schedule: TrainSchedule, **kw) -> list:
    if schedule.regime != "adversarial":
        raise ValueError("adversarial_train needs regime='adversarial'")
    return train(net, images, labels, schedule, **kw)


def data_augmentation_train(net, images, labels, schedule: TrainSchedule, **kw) -> list:
    if schedule.regime != "augment":
        raise ValueError("data_augmentation_train needs regime='augment'")
    return train(net, images, labels, schedule, **kw)


def multi_perturbation_train(net, images, labels, schedule: TrainSchedule, **kw) -> list:
    if schedule.regime != "multi":
        raise ValueError("multi_perturbation_train needs regime='multi'")
    return train(net, images, labels, schedule, **kw)


LOG_COLUMNS = ("epoch", "regime", "loss_clean", "loss_perturbed", "val_accuracy", "seconds")


def write_log_csv(path, history, timing: bool = True) -> None:
    """Per-epoch CSV; with ``timing=False`` the seconds column is written as 0."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in history:
            w.writerow([e.epoch, e.regime, f"{e.loss_clean:.8f}", f"{e.loss_perturbed:.8f}",
                        f"{e.val_accuracy:.4f}", f"{e.seconds if timing else 0.0:.3f}"])
