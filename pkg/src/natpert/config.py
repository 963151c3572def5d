"""Flat ``key=value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .adversarial import AttackConfig
from .datasets import DatasetSource
from .model import SgdConfig
from .perturb import PerturbationSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # dataset
    dataset: str = "synthetic_shapes"
    data_path: str = ""
    n_train: int = 1200
    n_val: int = 600
    n_test: int = 600
    # network
    conv_channels: tuple = (16, 32)
    # optimiser
    lr: float = 0.01
    momentum: float = 0.9
    milestones: tuple = (13,)  # decay for the last two mixed epochs of every robust regime
    gamma: float = 0.1
    batch_size: int = 32
    # schedule
    n1: int = 10
    n2: int = 5
    # perturbations
    jitter: float = 0.5
    elastic_sigma: float = 3.0
    occlusion_thickness: float = 3.0
    wave_frequency: float = 2.0
    # attack
    attack_steps: int = 10
    attack_step_ratio: float = 0.25
    # calibration
    rho: float = 10.0
    tolerance: float = 0.5
    repeats: int = 3
    max_evals: int = 30
    kinds: tuple = ("A", "E", "O", "N", "W", "S", "B")
    calibration_split: str = "val"
    # matrix
    augment: bool = False
    # run
    seed: int = 0
    timing: bool = False  # wall-clock columns are zero unless enabled

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.lr, self.momentum, self.milestones, self.gamma, self.batch_size)

    def source(self) -> DatasetSource:
        return DatasetSource(self.dataset, self.data_path, self.n_train, self.n_val,
                             self.n_test, self.seed)

    def spec(self, kind: str, severity: float = 0.0) -> PerturbationSpec:
        return PerturbationSpec(kind, severity, self.jitter, self.elastic_sigma,
                                self.occlusion_thickness, self.wave_frequency)

    def attack(self, epsilon: float, random_start: bool = False) -> AttackConfig:
        return AttackConfig(epsilon, epsilon * self.attack_step_ratio, self.attack_steps,
                            random_start)

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _parse(name: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if name == "kinds":
                return tuple(items)
            return tuple(int(t) for t in items)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key=value`` lines (``#`` comments, blank lines ignored)."""
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    defaults = {f.name: getattr(RunConfig(), f.name) for f in dataclasses.fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse(key, defaults[key], value))
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.as_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"
