"""
Standardising perturbations to an equal accuracy drop
=====================================================

Comparing robustness across perturbation types only makes sense if every
type hurts the standard classifier equally. Here a small network is trained
on the synthetic shapes and each kind's severity is tuned by bisection
until accuracy falls by the same number of points.
"""

from natpert import calibrate as cal
from natpert.config import RunConfig
from natpert.model import SmallConvNet, accuracy, init_params
from natpert.schedules import TrainSchedule, train

cfg = RunConfig()  # 1200 training images, two conv layers
data = cfg.source().load()

net = SmallConvNet(data.image_shape, data.num_classes, cfg.conv_channels)
init_params(net, cfg.seed)
train(net, *data.train, TrainSchedule("standard", cfg.n1, 0, cfg.sgd(), cfg.seed))
print(f"standard net: {accuracy(net, *data.val):.1f}% on the validation split")

# ten points of accuracy, give or take half a point
target, tol = cfg.rho, cfg.tolerance
results = []
for kind in cfg.kinds:
    base = cfg.attack(1.0) if kind == "A" else cfg.spec(kind)
    try:
        r = cal.calibrate_severity(net, *data.val, kind, target, tol, seed=cfg.seed,
                                   base=base)
    except cal.CalibrationError as exc:
        print(exc)
        continue
    results.append(r)

mse = {r.kind: cal.mean_mse(net, *data.val, r.condition(cfg.attack(1.0) if r.kind == "A"
                                                   else cfg.spec(r.kind)), r.seeds[0])
       for r in results}
print()
print(cal.format_report(cal.standardization_report(results, mse)))

# at an equal drop the adversarial change is far smaller than any natural one
natural = [k for k in mse if k != "A"]
if "A" in mse and natural:
    print(f"adversarial mse {mse['A']:.2f} vs smallest natural "
          f"{min(mse[k] for k in natural):.2f}")
