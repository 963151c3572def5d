"""
Natural perturbed training versus adversarial training
======================================================

Starting from the same standard network, one copy continues on clean images
mixed with elastic deformations, another on PGD adversarial examples. The
delta of each condition is the robust net's accuracy on it minus the standard
net's clean accuracy, so the standard net's own row shows the calibrated drop.

A third copy simply keeps training on clean images with the same schedule.
At this small scale the standard net is undertrained, so part of any
recovery comes from the extra epochs alone; the control makes that visible.
"""

from natpert import calibrate as cal
from natpert import evalharness as ev
from natpert.config import RunConfig
from natpert.model import SmallConvNet, init_params
from natpert.schedules import TrainSchedule, TrainState, train

cfg = RunConfig()  # 10 clean epochs, then 5 mixed ones with a late step decay
data = cfg.source().load()
x, y = data.test

std = SmallConvNet(data.image_shape, data.num_classes, cfg.conv_channels)
init_params(std, cfg.seed)
state = TrainState()
train(std, *data.train, TrainSchedule("standard", cfg.n1, 0, cfg.sgd(), cfg.seed), state=state)

conditions, seeds = {}, {}
for kind in ("A", "E", "O"):
    base = cfg.attack(1.0) if kind == "A" else cfg.spec(kind)
    r = cal.calibrate_severity(std, *data.val, kind, cfg.rho, cfg.tolerance, seed=cfg.seed,
                               base=base)
    conditions[kind], seeds[kind] = r.condition(base), r.seeds
    print(f"{kind}: severity {r.severity:.4g} drops validation accuracy by {r.drop:.2f}")


def continue_from_standard(schedule):
    net = std.copy()
    st = TrainState(state.epoch, {k: v.copy() for k, v in state.momentum.items()})
    train(net, *data.train, schedule, state=st)
    return net


sgd = cfg.sgd()
robust = [
    ("natural", "E", continue_from_standard(TrainSchedule(
        "natural", cfg.n1, cfg.n2, sgd, cfg.seed, specs=(conditions["E"],)))),
    ("adversarial", "A", continue_from_standard(TrainSchedule(
        "adversarial", cfg.n1, cfg.n2, sgd, cfg.seed,
        attack=cfg.attack(conditions["A"].epsilon, random_start=True)))),
    ("standard+", "", continue_from_standard(TrainSchedule(
        "standard", cfg.n1 + cfg.n2, 0, sgd, cfg.seed))),
]
records = ev.experiment_matrix(std, robust, x, y, conditions, cfg.rho, cfg.seed, seeds,
                               timing=False, dataset="synthetic")

print(f"\n{'regime':<14}{'clean':>8}{'adv':>8}{'elastic':>9}{'occl':>8}")
rows = {}
for r in records:
    rows.setdefault(f"{r.regime}[{r.train_kind}]" if r.train_kind else r.regime, {})[
        r.condition] = r.delta
for name, d in rows.items():
    print(f"{name:<14}{d['clean']:>+8.2f}{d['A']:>+8.2f}{d['E']:>+9.2f}{d['O']:>+8.2f}")

# the same records drawn as a scatter plot, one marker per test condition
ev.render_scatter(records, "robust_training.svg", title="delta per training regime")
print("\nwrote robust_training.svg")
