"""Robustness evaluation: the delta metric, the regime x condition matrix and
the ablation sweeps.

Sign convention: ``delta = acc(robust net on condition) - acc(standard net on
clean)``, so positive values are improvements and an untreated calibrated
perturbation sits at ``-rho``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import calibrate as cal
from . import perturb as pt
from .model import SgdConfig, accuracy
from .schedules import TrainSchedule, TrainState, train
from .svg import PALETTE, scatter

CONDITIONS = ("clean",) + cal.ALL_KINDS
CONDITION_NAMES = {"clean": "clean", "A": "adversarial", **pt.KIND_NAMES}
MARKERS = {
    "clean": "cross",
    "A": "plus",
    "E": "circle",
    "O": "square",
    "N": "star",
    "W": "triangle",
    "S": "star5",
    "B": "triangle_down",
}
REGIME_ORDER = ("standard", "natural", "adversarial", "multi", "augment")
ABLATIONS = ("epoch_budget", "n2_sweep", "rho_sweep")


@dataclass
class ExperimentRecord:
    regime: str
    train_kind: str
    condition: str
    acc_standard_clean: float
    acc_robust: float
    rho_target: float
    seed: int
    seconds: float = 0.0
    dataset: str = ""

    @property
    def delta(self) -> float:
        return self.acc_robust - self.acc_standard_clean

    @property
    def seen(self) -> bool:
        return self.condition != "clean" and self.condition in self.train_kind

    def sort_key(self):
        base = self.regime.split("[")[0]
        kinds = tuple(CONDITIONS.index(k) for k in self.train_kind if k in CONDITIONS)
        return (REGIME_ORDER.index(base) if base in REGIME_ORDER else len(REGIME_ORDER),
                self.regime, kinds, CONDITIONS.index(self.condition))


def calibrated_conditions(results) -> dict:
    """``{kind: condition}`` for a collection of successful calibrations."""
    out = {}
    for r in results:
        if not r.ok:
            raise ValueError(f"calibration of {r.kind} did not succeed ({r.status})")
        out[r.kind] = r.condition()
    return out


def evaluate(net, images, labels, condition_name: str, conditions: dict, seeds=(0,)) -> float:
    """Accuracy of ``net`` under a named test condition (mean over ``seeds``)."""
    if condition_name == "clean":
        return accuracy(net, images, labels)
    if condition_name not in conditions:
        raise KeyError(f"condition {condition_name!r} has not been calibrated")
    cond = conditions[condition_name]
    if not cal.is_stochastic(cond):
        seeds = tuple(seeds)[:1]
    accs = [accuracy(net, cal.perturb_images(net, images, labels, cond, s), labels) for s in seeds]
    return float(np.mean(accs))


def delta(standard_net, robust_net, images, labels, condition_name: str, conditions: dict,
          seeds=(0,), standard_clean: float | None = None) -> float:
    """``acc(robust_net on condition) - acc(standard_net on clean)``."""
    if condition_name != "clean" and condition_name not in conditions:
        raise KeyError(f"condition {condition_name!r} has not been calibrated")
    if standard_clean is None:
        standard_clean = accuracy(standard_net, images, labels)
    return evaluate(robust_net, images, labels, condition_name, conditions, seeds) - standard_clean


def experiment_matrix(standard_net, robust_nets, images, labels, conditions: dict,
                      rho_target: float, seed: int = 0, eval_seeds: dict | None = None,
                      timing: bool = True, dataset: str = "") -> list:
    """Cross every trained network with every test condition.

    ``robust_nets`` is a sequence of ``(regime, train_kind, net)``; the
    standard network's own row is always included. ``eval_seeds`` optionally
    maps a condition to the seeds it is evaluated with (defaults to
    ``(seed,)``).
    """
    eval_seeds = eval_seeds or {}
    base = accuracy(standard_net, images, labels)
    names = [c for c in CONDITIONS if c == "clean" or c in conditions]
    rows = [("standard", "", standard_net)] + list(robust_nets)
    records = []
    for regime, kind, net in rows:
        for cname in names:
            t0 = time.perf_counter()
            acc = evaluate(net, images, labels, cname, conditions, eval_seeds.get(cname, (seed,)))
            secs = time.perf_counter() - t0 if timing else 0.0
            records.append(ExperimentRecord(regime, kind, cname, base, acc, rho_target, seed,
                                            secs, dataset))
    return sorted(records, key=ExperimentRecord.sort_key)


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationSetup:
    n1: int
    n2: int
    sgd: SgdConfig = field(default_factory=SgdConfig)
    kinds: tuple = pt.KINDS
    rho: float = 10.0
    tolerance: float = 0.5
    repeats: int = 3
    seed: int = 0
    timing: bool = True
    dataset: str = ""


def _natural(setup: AblationSetup, kind: str, severity: float, n2: int) -> TrainSchedule:
    return TrainSchedule("natural", setup.n1, n2, setup.sgd, setup.seed,
                         (pt.PerturbationSpec(kind, severity),))


def ablate(make_net, data, which: str, setup: AblationSetup) -> list:
    """Run one of the ablations and return its records (all on clean test data).

    ``make_net()`` returns a freshly initialised network; ``data`` has
    ``train``, ``val`` and ``test`` splits. ``delta`` of every record is
    relative to the standard network trained for ``n1`` epochs.

    * ``epoch_budget`` -- standard training for ``2*n1`` epochs against natural
      training for ``n1 + n2`` epochs (``n2 < n1``), one row per kind.
    * ``n2_sweep`` -- natural training with ``n2`` in 0, 25, 50 and 75 % of ``n1``.
    * ``rho_sweep`` -- calibrate at drops 5, 10, 20 and train with each.
    """
    if which not in ABLATIONS:
        raise ValueError(f"unknown ablation {which!r}; choose from {ABLATIONS}")
    if which == "epoch_budget" and not setup.n2 < setup.n1:
        raise ValueError("epoch_budget ablation needs n2 < n1")
    xtr, ytr = data.train.images, data.train.labels
    xte, yte = data.test.images, data.test.labels
    std_net = make_net()
    std_state = TrainState()
    train(std_net, xtr, ytr, TrainSchedule("standard", setup.n1, 0, setup.sgd, setup.seed),
          state=std_state)
    base = accuracy(std_net, xte, yte)

    def continue_from_standard(schedule):
        net = std_net.copy()
        state = TrainState(std_state.epoch, {k: v.copy() for k, v in std_state.momentum.items()})
        t0 = time.perf_counter()
        train(net, xtr, ytr, schedule, state=state)
        return net, time.perf_counter() - t0

    def record(regime, kind, net, secs, rho):
        return ExperimentRecord(regime, kind, "clean", base, accuracy(net, xte, yte), rho,
                                setup.seed, secs if setup.timing else 0.0, setup.dataset)

    def severities(rho):
        out = {}
        for k in setup.kinds:
            r = cal.calibrate_severity(std_net, data.val.images, data.val.labels, k, rho,
                                       setup.tolerance, repeats=setup.repeats, seed=setup.seed)
            out[k] = r.severity
        return out

    records = []
    if which == "epoch_budget":
        long_net, secs = continue_from_standard(
            TrainSchedule("standard", 2 * setup.n1, 0, setup.sgd, setup.seed))
        records.append(record(f"standard[epochs={2 * setup.n1}]", "", long_net, secs, setup.rho))
        for k, s in severities(setup.rho).items():
            net, secs = continue_from_standard(_natural(setup, k, s, setup.n2))
            records.append(record(f"natural[epochs={setup.n1 + setup.n2}]", k, net, secs, setup.rho))
    elif which == "n2_sweep":
        sev = severities(setup.rho)
        for frac in (0, 25, 50, 75):
            n2 = int(round(setup.n1 * frac / 100))
            for k, s in sev.items():
                net, secs = continue_from_standard(_natural(setup, k, s, n2))
                records.append(record(f"natural[n2={n2}]", k, net, secs, setup.rho))
    else:
        for rho in (5.0, 10.0, 20.0):
            for k, s in severities(rho).items():
                net, secs = continue_from_standard(_natural(setup, k, s, setup.n2))
                records.append(record(f"natural[rho={rho:g}]", k, net, secs, rho))
    return records


# ---------------------------------------------------------------------------
# output

RESULT_COLUMNS = ("regime", "train_kind", "condition", "seen", "acc_standard_clean",
                  "acc_robust", "delta", "rho_target", "seed", "seconds")


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([r.regime, r.train_kind, r.condition, int(r.seen),
                        f"{r.acc_standard_clean:.4f}", f"{r.acc_robust:.4f}", f"{r.delta:.4f}",
                        f"{r.rho_target:g}", r.seed, f"{r.seconds:.3f}"])


def read_records_csv(path, dataset: str = "") -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ExperimentRecord(row["regime"], row["train_kind"], row["condition"],
                                        float(row["acc_standard_clean"]), float(row["acc_robust"]),
                                        float(row["rho_target"]), int(row["seed"]),
                                        float(row["seconds"]), dataset))
    return out


def _regime_label(r: ExperimentRecord) -> str:
    if r.regime == "natural" and len(r.train_kind) == 1:
        return CONDITION_NAMES[r.train_kind]
    if r.regime == "adversarial":
        return "adversarial"
    return f"{r.regime}:{r.train_kind}" if r.train_kind else r.regime


def render_scatter(records, path=None, grouping: str = "regime", title: str = "") -> str:
    """Delta scatter: marker shape = test condition, color = training regime.

    ``grouping`` picks the x-axis: ``"regime"`` (one column per trained net),
    ``"condition"`` (one per test condition) or ``"dataset"``. Returns the SVG
    text and writes it to ``path`` when given.
    """
    records = sorted(records, key=ExperimentRecord.sort_key)
    if not records:
        raise ValueError("cannot render an empty record set")
    labels = []
    for r in records:
        lab = _regime_label(r)
        if lab not in labels:
            labels.append(lab)
    colors = {lab: PALETTE[i % len(PALETTE)] for i, lab in enumerate(labels)}
    present = [c for c in CONDITIONS if any(r.condition == c for r in records)]
    shapes = {CONDITION_NAMES[c]: MARKERS[c] for c in present}

    def group_of(r):
        if grouping == "regime":
            return _regime_label(r)
        if grouping == "condition":
            return CONDITION_NAMES[r.condition]
        if grouping == "dataset":
            return r.dataset or "dataset"
        raise ValueError(f"unknown grouping {grouping!r}")

    groups = []
    for r in records:
        if group_of(r) not in groups:
            groups.append(group_of(r))
    points = [(group_of(r), CONDITION_NAMES[r.condition], _regime_label(r), r.delta)
              for r in records]
    rho = records[0].rho_target
    text = scatter(points, groups, shapes, colors, title=title or (records[0].dataset or ""),
                   ylabel="delta (accuracy points)", hlines=(0.0, -rho))
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text
