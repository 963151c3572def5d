"""l-infinity BIM and PGD attacks built on input gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import accuracy
from .tensorcore import grad_wrt_input


@dataclass(frozen=True)
class AttackConfig:
    """``step`` defaults to ``epsilon / 4``; ``random_start`` selects PGD."""

    epsilon: float
    step: float | None = None
    steps: int = 10
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("attack needs at least one step (K >= 1)")
        if self.step is None:
            object.__setattr__(self, "step", self.epsilon / 4.0)
        if self.step < 0:
            raise ValueError("step size must be >= 0")

    def with_epsilon(self, epsilon: float) -> "AttackConfig":
        """Same attack at another radius; the step keeps its ratio to epsilon."""
        if self.epsilon > 0:
            step = self.step * (float(epsilon) / self.epsilon)
        else:
            step = None
        return AttackConfig(float(epsilon), step, self.steps, self.random_start)


def _iterate(net, x0: np.ndarray, x: np.ndarray, y, cfg: AttackConfig) -> np.ndarray:
    eps = x0.dtype.type(cfg.epsilon)
    step = x0.dtype.type(cfg.step)
    lo, hi = x0 - eps, x0 + eps
    for _ in range(cfg.steps):
        g = grad_wrt_input(net, x, y).data
        x = np.clip(x + step * np.sign(g), lo, hi)
    return np.clip(x, 0.0, 1.0)


def bim_attack(net, x, y, cfg: AttackConfig, batch_size: int = 256) -> np.ndarray:
    """Untargeted basic iterative method.

    K times ``x <- clip_{eps, x0}(x + step * sign(grad_x L(f(x), y)))`` followed
    by a clamp to [0, 1].
    """
    if cfg.random_start:
        raise ValueError("bim_attack expects random_start=False; use pgd_example")
    x0 = np.asarray(x)
    y = np.asarray(y)
    if cfg.epsilon == 0:
        return x0.copy()
    out = np.empty_like(x0)
    for i in range(0, len(x0), batch_size):
        xb = x0[i:i + batch_size]
        out[i:i + batch_size] = _iterate(net, xb, xb.copy(), y[i:i + batch_size], cfg)
    return out


def pgd_example(net, x, y, cfg: AttackConfig, rng: np.random.Generator,
                batch_size: int = 256) -> np.ndarray:
    """BIM from a uniform random start inside the epsilon ball (clamped to [0, 1])."""
    if not cfg.random_start:
        raise ValueError("pgd_example expects random_start=True")
    x0 = np.asarray(x)
    y = np.asarray(y)
    if cfg.epsilon == 0:
        return x0.copy()
    out = np.empty_like(x0)
    for i in range(0, len(x0), batch_size):
        xb = x0[i:i + batch_size]
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, xb.shape).astype(xb.dtype)
        start = np.clip(xb + noise, 0.0, 1.0)
        out[i:i + batch_size] = _iterate(net, xb, start, y[i:i + batch_size], cfg)
    return out


def fgsm(net, x, y, epsilon: float) -> np.ndarray:
    """Single signed-gradient step, ``clamp(x + eps * sign(grad), 0, 1)``."""
    x = np.asarray(x)
    g = grad_wrt_input(net, x, y).data
    return np.clip(x + x.dtype.type(epsilon) * np.sign(g), 0.0, 1.0)


def attack_success_drop(net, images, labels, cfg: AttackConfig, seed: int = 0) -> float:
    """Clean accuracy minus accuracy on attacked images, in percentage points."""
    if len(labels) == 0:
        raise ValueError("empty dataset")
    if cfg.random_start:
        adv = pgd_example(net, images, labels, cfg, np.random.default_rng(seed))
    else:
        adv = bim_attack(net, images, labels, cfg)
    return accuracy(net, images, labels) - accuracy(net, adv, labels)
