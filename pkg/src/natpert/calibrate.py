"""Severity calibration: tune every perturbation to the same accuracy drop.

A *condition* is either a :class:`~natpert.perturb.PerturbationSpec`
(natural kinds) or an :class:`~natpert.adversarial.AttackConfig` (kind
``"A"``). The drop of a condition on a classifier is

    rho = acc(clean) - acc(perturbed)

in percentage points, averaged over ``R`` independently seeded evaluations.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import perturb as pt
from .adversarial import AttackConfig, bim_attack, pgd_example
from .model import accuracy

log = logging.getLogger(__name__)

ALL_KINDS = ("A",) + pt.KINDS
ATTACK_STEPS = 10

DEFAULT_SMAX = {
    "A": 0.1,
    "E": 100.0,
    "O": 1.0,
    "N": 0.5,
    "W": 5.0,
    "S": 1.0,
    "B": 4.0,
}


class CalibrationError(RuntimeError):
    pass


def condition_for(kind: str, level: float, base=None):
    """Condition of ``kind`` at master severity (or epsilon) ``level``."""
    if kind == "A":
        if base is None:
            return AttackConfig(float(level), steps=ATTACK_STEPS)
        return base.with_epsilon(level)
    if base is None:
        return pt.PerturbationSpec(kind, float(level))
    return base.with_severity(level)


def condition_kind(condition) -> str:
    return "A" if isinstance(condition, AttackConfig) else condition.kind


def condition_level(condition) -> float:
    return condition.epsilon if isinstance(condition, AttackConfig) else condition.severity


def is_stochastic(condition) -> bool:
    if isinstance(condition, AttackConfig):
        return condition.random_start
    return True


def perturb_images(net, images, labels, condition, seed: int, indices=None) -> np.ndarray:
    """Apply a natural perturbation or an attack against ``net``."""
    if isinstance(condition, AttackConfig):
        if condition.random_start:
            return pgd_example(net, images, labels, condition, np.random.default_rng(seed))
        return bim_attack(net, images, labels, condition)
    return pt.apply_batch(condition, images, seed, indices)


def measure_drop(net, images, labels, condition, seeds, clean_acc: float | None = None) -> float:
    """Mean over ``seeds`` of clean accuracy minus perturbed accuracy."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty dataset")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if clean_acc is None:
        clean_acc = accuracy(net, images, labels)
    if condition_level(condition) == 0:
        return 0.0
    if not is_stochastic(condition):
        seeds = seeds[:1]
    drops = [clean_acc - accuracy(net, perturb_images(net, images, labels, condition, s), labels)
             for s in seeds]
    return float(np.mean(drops))


@dataclass
class CalibrationResult:
    kind: str
    severity: float
    drop: float
    target: float
    tolerance: float
    evals: int
    repeats: int
    seeds: tuple
    base_seed: int = 0
    status: str = "ok"
    probes: list = field(default_factory=list, repr=False)

    @property
    def deviation(self) -> float:
        return abs(self.drop - self.target)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def condition(self, base=None):
        return condition_for(self.kind, self.severity, base)


def _seeds(base_seed: int, kind: str, probe: int, repeats: int) -> tuple:
    ss = np.random.SeedSequence([int(base_seed), ALL_KINDS.index(kind), int(probe)])
    return tuple(int(s) for s in ss.generate_state(repeats))


_FINAL_PROBE = 2 ** 20  # probe id reserved for the reported seeds


def bisect_drop(measure, target: float, tolerance: float, s_max: float,
                max_evals: int = 30, seed_fn=None, final_seeds=()) -> tuple:
    """Noisy-bisection core shared by the calibrators.

    ``measure(s, seeds)`` returns the mean drop at level ``s``. Probes first use
    fresh seeds (``seed_fn(probe_index)``); once a probe lands inside the
    tolerance band, or half the budget is spent, the search continues on
    ``final_seeds`` so the accepted drop is a measurement on the seeds that get
    reported.

    Returns:
        ``(status, level, drop, probes)`` where ``status`` is ``"ok"``,
        ``"non-monotone"`` or ``"max-evals"``.

    Raises:
        CalibrationError: the drop at ``s_max`` falls short of the target.
    """
    if seed_fn is None:
        seed_fn = lambda i: (i,)
    probes = []
    cache = {}

    def probe(s, seeds):
        key = (s, tuple(seeds))
        if key not in cache:
            cache[key] = float(measure(s, seeds))
            probes.append((s, cache[key], tuple(seeds) == tuple(final_seeds)))
        return cache[key]

    top = probe(float(s_max), seed_fn(0))
    if top < target - tolerance:
        raise CalibrationError(f"target unreachable: drop {top:.2f} at s_max={s_max}")

    lo, hi = 0.0, float(s_max)
    d_lo, d_hi = 0.0, top
    guess, non_monotone = float(s_max), False
    while len(probes) < max_evals // 2:
        mid = 0.5 * (lo + hi)
        d = probe(mid, seed_fn(len(probes)))
        if d < d_lo - 2 * tolerance or d > d_hi + 2 * tolerance:
            non_monotone = True
        guess = mid
        if abs(d - target) <= tolerance:
            break
        if d < target:
            lo, d_lo = mid, d
        else:
            hi, d_hi = mid, d

    # the bracket was found under other random draws, so widen it
    pad = 0.25 * (hi - lo) + 0.05 * s_max
    lo, hi = max(0.0, lo - pad), min(float(s_max), hi + pad)
    s, best = guess, None
    while len(probes) < max_evals:
        d = probe(s, final_seeds)
        if best is None or abs(d - target) < abs(best[1] - target):
            best = (s, d)
        if abs(d - target) <= tolerance:
            return "ok", s, d, probes
        if d < target:
            lo = s
        else:
            hi = s
        if hi - lo < 1e-6 * s_max:
            lo, hi = 0.0, float(s_max)
        s = 0.5 * (lo + hi)
    if best is None:
        best = (guess, probe(guess, final_seeds))
    return ("non-monotone" if non_monotone else "max-evals"), best[0], best[1], probes


def calibrate_severity(net, images, labels, kind: str, target: float = 10.0,
                       tolerance: float = 0.5, s_max: float | None = None,
                       max_evals: int = 30, repeats: int = 3, seed: int = 0,
                       base=None) -> CalibrationResult:
    """Find the master severity (epsilon for ``kind="A"``) whose mean drop over
    ``repeats`` seeded evaluations is within ``tolerance`` of ``target``.

    Failure to converge is reported through ``status``; an unreachable target
    raises :class:`CalibrationError`.
    """
    kind = "A" if kind == "A" else pt.kind_code(kind)
    if s_max is None:
        s_max = DEFAULT_SMAX[kind]
    labels = np.asarray(labels)
    final_seeds = _seeds(seed, kind, _FINAL_PROBE, repeats)
    if target == 0:
        return CalibrationResult(kind, 0.0, 0.0, 0.0, tolerance, 0, repeats, final_seeds, seed)
    clean = accuracy(net, images, labels)

    def measure(s, seeds):
        return measure_drop(net, images, labels, condition_for(kind, s, base), seeds,
                            clean_acc=clean)

    try:
        status, s, d, probes = bisect_drop(
            measure, target, tolerance, s_max, max_evals,
            seed_fn=lambda i: _seeds(seed, kind, i, repeats), final_seeds=final_seeds)
    except CalibrationError as exc:
        raise CalibrationError(f"{kind}: {exc}") from None
    if status != "ok":
        log.warning("calibration of %s failed (%s): best drop %.2f at %.4g", kind, status, d, s)
    return CalibrationResult(kind, float(s), d, target, tolerance, len(probes), repeats,
                             final_seeds, seed, status, probes)


def mean_mse(net, images, labels, condition, seed: int) -> float:
    """Average 0-255-scale MSE between clean and perturbed images."""
    pert = perturb_images(net, images, labels, condition, seed)
    return float(np.mean([pt.mse(a, b) for a, b in zip(images, pert)]))


REPORT_COLUMNS = ("kind", "severity", "drop", "deviation", "mse")


def standardization_report(results, mse_by_kind: dict) -> list:
    """Rows (kind order A, E, O, N, W, S, B) of the standardisation table."""
    if not results:
        raise ValueError("no calibration results")
    rows = []
    for r in sorted(results, key=lambda r: ALL_KINDS.index(r.kind)):
        rows.append({
            "kind": r.kind,
            "severity": r.severity,
            "drop": r.drop,
            "deviation": r.deviation,
            "mse": mse_by_kind.get(r.kind, float("nan")),
        })
    return rows


def format_report(rows) -> str:
    """Fixed-width console rendering of :func:`standardization_report` rows."""
    buf = io.StringIO()
    buf.write(f"{'kind':<6}{'severity':>12}{'drop':>9}{'dev':>8}{'mse':>12}\n")
    for r in rows:
        buf.write(f"{r['kind']:<6}{r['severity']:>12.5g}{r['drop']:>9.2f}"
                  f"{r['deviation']:>8.2f}{r['mse']:>12.2f}\n")
    return buf.getvalue()


CALIBRATION_COLUMNS = ("kind", "severity", "drop", "deviation", "evals", "seed")


def write_calibration_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_COLUMNS)
        for r in sorted(results, key=lambda r: ALL_KINDS.index(r.kind)):
            w.writerow([r.kind, repr(float(r.severity)), f"{r.drop:.6f}", f"{r.deviation:.6f}",
                        r.evals, r.base_seed])


def read_calibration_csv(path) -> dict:
    """``{kind: (severity, drop)}`` from a file written by :func:`write_calibration_csv`."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["kind"]] = (float(row["severity"]), float(row["drop"]))
    return out


def write_report_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["kind"], repr(float(r["severity"])), f"{r['drop']:.6f}",
                        f"{r['deviation']:.6f}", f"{r['mse']:.6f}"])
