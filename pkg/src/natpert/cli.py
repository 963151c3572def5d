"""Command line interface.

Every subcommand writes into ``--out`` (a directory, except for ``perturb``)
and finishes by writing ``manifest.json``: the effective configuration, the
seeds, the argument vector and a SHA-256 of every output file. ``natpert
replay`` re-runs a manifest and checks that the outputs come back identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile

import numpy as np

from . import __version__
from . import calibrate as cal
from . import evalharness as ev
from . import perturb as pt
from . import storage
from .config import ConfigError, RunConfig, dump_config, load_config
from .model import SmallConvNet, accuracy, init_params
from .schedules import REGIMES, TrainSchedule, TrainState, train, write_log_csv

log = logging.getLogger("natpert")

MULTI_KINDS = ("E", "O", "N", "S")
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _outdir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _new_net(cfg: RunConfig, data) -> SmallConvNet:
    net = SmallConvNet(data.image_shape, data.num_classes, tuple(cfg.conv_channels))
    init_params(net, cfg.seed)
    return net


def _load_net(path):
    ckpt = storage.load_checkpoint(path)
    return storage.net_from_checkpoint(ckpt), ckpt


def _save_net(path, net, state: TrainState, manifest: dict) -> None:
    momentum = {k: np.asarray(v, dtype=np.float32) for k, v in state.momentum.items()}
    storage.save_checkpoint(path, storage.checkpoint_from_net(net, state.epoch, momentum, manifest))


def _state_of(ckpt) -> TrainState:
    return TrainState(ckpt.epoch, {k: v.astype(np.float32).copy() for k, v in ckpt.momentum.items()})


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _strip_out(argv) -> list:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--out", "--config"):
            skip = True
            continue
        if a.startswith(("--out=", "--config=")):
            continue
        out.append(a)
    return out


def write_manifest(out_dir, command: str, argv, cfg: RunConfig | None, outputs, extra=None) -> str:
    """Seed manifest for a run; ``outputs`` are paths relative to ``out_dir``."""
    doc = {
        "command": command,
        "argv": _strip_out(argv),
        "config": dump_config(cfg) if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "rng": "numpy SeedSequence([seed, epoch, stream]) per epoch; "
               "SeedSequence([seed, index, salt]) per image",
        "versions": {"natpert": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "outputs": {name: _sha256(os.path.join(out_dir, name)) for name in sorted(outputs)},
    }
    if extra:
        doc.update(extra)
    path = os.path.join(out_dir, MANIFEST)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _severities(args, cfg: RunConfig, kinds) -> dict:
    if getattr(args, "calibration", None):
        table = cal.read_calibration_csv(args.calibration)
        missing = [k for k in kinds if k not in table]
        if missing:
            raise UsageError(f"calibration file has no entry for {','.join(missing)}")
        return {k: table[k][0] for k in kinds}
    if getattr(args, "severity", None) is not None:
        return {k: args.severity for k in kinds}
    raise UsageError("a perturbed regime needs --calibration or --severity")


def build_schedule(regime: str, cfg: RunConfig, kinds: str, severities: dict) -> TrainSchedule:
    if regime == "standard":
        return TrainSchedule("standard", cfg.n1, 0, cfg.sgd(), cfg.seed)
    if regime == "adversarial":
        return TrainSchedule("adversarial", cfg.n1, cfg.n2, cfg.sgd(), cfg.seed,
                             attack=cfg.attack(severities["A"], random_start=True))
    specs = tuple(cfg.spec(k, severities[k]) for k in kinds)
    return TrainSchedule(regime, cfg.n1, cfg.n2, cfg.sgd(), cfg.seed, specs)


def _regime_kinds(regime: str, kind: str | None) -> str:
    if regime == "standard":
        return ""
    if regime == "adversarial":
        return "A"
    if regime == "multi":
        return "".join(pt.kind_code(k) for k in kind) if kind else "".join(MULTI_KINDS)
    if not kind:
        raise UsageError(f"--kind is required for regime {regime}")
    return pt.kind_code(kind)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args, argv) -> None:
    cfg = _config(args)
    data = cfg.source().load()
    kinds = _regime_kinds(args.regime, args.kind)
    sev = _severities(args, cfg, kinds) if kinds else {}
    schedule = build_schedule(args.regime, cfg, kinds, sev)
    if args.checkpoint:
        net, ckpt = _load_net(args.checkpoint)
        state = _state_of(ckpt)
    else:
        net, state = _new_net(cfg, data), TrainState()
    out = _outdir(args.out)
    history = train(net, *data.train, schedule, val=tuple(data.val), state=state)
    write_log_csv(os.path.join(out, "log.csv"), history, timing=cfg.timing)
    meta = {"regime": args.regime, "train_kind": kinds, "seed": cfg.seed,
            "severities": {k: repr(float(v)) for k, v in sorted(sev.items())}}
    _save_net(os.path.join(out, "model.npt"), net, state, meta)
    acc = accuracy(net, *data.test)
    with open(os.path.join(out, "summary.csv"), "w", newline="\n") as fh:
        fh.write("regime,train_kind,epochs,test_accuracy\n")
        fh.write(f"{args.regime},{kinds},{state.epoch},{acc:.4f}\n")
    print(f"{args.regime}{'[' + kinds + ']' if kinds else ''}: test accuracy {acc:.2f}% "
          f"after {state.epoch} epochs")
    write_manifest(out, "train", argv, cfg, ["log.csv", "model.npt", "summary.csv"])


def _calibrate_all(net, images, labels, cfg: RunConfig, kinds, rho=None, tol=None) -> list:
    results = []
    for k in kinds:
        base = cfg.attack(1.0) if k == "A" else cfg.spec(k)
        r = cal.calibrate_severity(net, images, labels, k, cfg.rho if rho is None else rho,
                                   cfg.tolerance if tol is None else tol,
                                   max_evals=cfg.max_evals, repeats=cfg.repeats,
                                   seed=cfg.seed, base=base)
        log.info("calibrated %s: level %.5g drop %.2f (%s, %d probes)",
                 k, r.severity, r.drop, r.status, r.evals)
        results.append(r)
    return results


def _mse_table(net, images, labels, results, cfg) -> dict:
    out = {}
    for r in results:
        cond = r.condition(cfg.attack(1.0) if r.kind == "A" else cfg.spec(r.kind))
        out[r.kind] = cal.mean_mse(net, images, labels, cond, r.seeds[0])
    return out


def _split(data, name):
    if name not in ("train", "val", "test"):
        raise UsageError(f"unknown split {name!r}")
    return getattr(data, name)


def cmd_calibrate(args, argv) -> None:
    cfg = _config(args)
    if args.rho is not None:
        cfg.rho = args.rho
    if args.tolerance is not None:
        cfg.tolerance = args.tolerance
    if args.kinds:
        cfg.kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    data = cfg.source().load()
    net, _ = _load_net(args.checkpoint)
    images, labels = _split(data, args.split)
    results = _calibrate_all(net, images, labels, cfg, cfg.kinds)
    out = _outdir(args.out)
    cal.write_calibration_csv(os.path.join(out, "calibration.csv"), results)
    rows = cal.standardization_report(results, _mse_table(net, images, labels, results, cfg))
    cal.write_report_csv(os.path.join(out, "report.csv"), rows)
    print(cal.format_report(rows), end="")
    write_manifest(out, "calibrate", argv, cfg, ["calibration.csv", "report.csv"])
    bad = [r.kind for r in results if not r.ok]
    if bad:
        raise RuntimeError(f"calibration did not converge for {','.join(bad)}")


def cmd_attack(args, argv) -> None:
    cfg = _config(args)
    if args.steps is not None:
        cfg.attack_steps = args.steps
    data = cfg.source().load()
    net, _ = _load_net(args.checkpoint)
    images, labels = _split(data, args.split)
    acfg = cfg.attack(args.epsilon, random_start=args.random_start)
    adv = cal.perturb_images(net, images, labels, acfg, cfg.seed)
    out = _outdir(args.out)
    storage.write_tensor(os.path.join(out, "adversarial.npt"), adv)
    linf = np.abs(adv.astype(np.float64) - images.astype(np.float64)).reshape(len(adv), -1).max(1)
    from .model import predict
    before, after = predict(net, images), predict(net, adv)
    with open(os.path.join(out, "linf.csv"), "w", newline="\n") as fh:
        fh.write("index,label,linf,pred_clean,pred_adversarial\n")
        for i, (y, d, p0, p1) in enumerate(zip(labels, linf, before, after)):
            fh.write(f"{i},{y},{d:.8f},{p0},{p1}\n")
    acc0 = 100.0 * np.mean(before == labels)
    acc1 = 100.0 * np.mean(after == labels)
    print(f"epsilon {args.epsilon:g}, K={acfg.steps}: accuracy {acc0:.2f}% -> {acc1:.2f}%, "
          f"max linf {linf.max():.6f}")
    write_manifest(out, "attack", argv, cfg, ["adversarial.npt", "linf.csv"])


def cmd_perturb(args, argv) -> None:
    cfg = _config(args)
    images = storage.read_tensor(args.inp).astype(np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4:
        raise UsageError(f"expected an (N, C, H, W) tensor, got shape {images.shape}")
    spec = cfg.spec(pt.kind_code(args.kind), args.severity)
    out = pt.apply_batch(spec, images, cfg.seed)
    storage.write_tensor(args.out, out)
    d = os.path.dirname(os.path.abspath(args.out))
    mse = np.mean([pt.mse(a, b) for a, b in zip(images, out)])
    print(f"{pt.KIND_NAMES[spec.kind]} severity {args.severity:g}: {len(out)} images, "
          f"mean MSE {mse:.3f}")
    write_manifest(d, "perturb", argv, cfg, [os.path.basename(args.out)])


def _regimes(cfg: RunConfig, kinds) -> list:
    """(regime, train_kind) pairs trained by ``matrix``."""
    out = [("natural", k) for k in kinds if k in pt.KINDS]
    if "A" in kinds:
        out.append(("adversarial", "A"))
    if all(k in kinds for k in MULTI_KINDS):
        out.append(("multi", "".join(MULTI_KINDS)))
    if cfg.augment:
        out += [("augment", k) for k in kinds if k in pt.KINDS]
    return out


def run_matrix(cfg: RunConfig, out: str, save_checkpoints: bool = True) -> dict:
    """Whole pipeline: standard net, calibration, robust nets, matrix, plot."""
    data = cfg.source().load()
    xte, yte = data.test.images, data.test.labels
    ckdir = os.path.join(out, "checkpoints")
    files = []
    std = _new_net(cfg, data)
    state = TrainState()
    history = train(std, *data.train, build_schedule("standard", cfg, "", {}),
                    val=tuple(data.val), state=state)
    write_log_csv(os.path.join(out, "log_standard.csv"), history, timing=cfg.timing)
    files.append("log_standard.csv")
    if save_checkpoints:
        os.makedirs(ckdir, exist_ok=True)
        _save_net(os.path.join(ckdir, "standard.npt"), std, state,
                  {"regime": "standard", "seed": cfg.seed})
        files.append("checkpoints/standard.npt")

    # severities are standardised on the validation split by default; the
    # matrix reuses the calibration seeds on the test split
    cal_images, cal_labels = _split(data, cfg.calibration_split)
    results = _calibrate_all(std, cal_images, cal_labels, cfg, cfg.kinds)
    cal.write_calibration_csv(os.path.join(out, "calibration.csv"), results)
    rows = cal.standardization_report(results, _mse_table(std, cal_images, cal_labels,
                                                          results, cfg))
    cal.write_report_csv(os.path.join(out, "report.csv"), rows)
    files += ["calibration.csv", "report.csv"]
    log.info("standardisation:\n%s", cal.format_report(rows))
    bad = [r.kind for r in results if not r.ok]
    if bad:
        raise RuntimeError(f"calibration did not converge for {','.join(bad)}")
    sev = {r.kind: r.severity for r in results}
    conditions = {r.kind: r.condition(cfg.attack(1.0) if r.kind == "A" else cfg.spec(r.kind))
                  for r in results}
    eval_seeds = {r.kind: r.seeds for r in results}

    robust = []
    for regime, kinds in _regimes(cfg, cfg.kinds):
        net = std.copy()
        st = TrainState(state.epoch, {k: v.copy() for k, v in state.momentum.items()})
        sched = build_schedule(regime, cfg, kinds, sev)
        log.info("training %s[%s]", regime, kinds)
        hist = train(net, *data.train, sched, val=tuple(data.val), state=st)
        name = f"{regime}_{kinds}"
        write_log_csv(os.path.join(out, f"log_{name}.csv"), hist, timing=cfg.timing)
        files.append(f"log_{name}.csv")
        if save_checkpoints:
            _save_net(os.path.join(ckdir, f"{name}.npt"), net, st,
                      {"regime": regime, "train_kind": kinds, "seed": cfg.seed,
                       "severities": {k: repr(float(sev[k])) for k in kinds}})
            files.append(f"checkpoints/{name}.npt")
        robust.append((regime, kinds, net))

    records = ev.experiment_matrix(std, robust, xte, yte, conditions, cfg.rho, cfg.seed,
                                   eval_seeds, timing=cfg.timing, dataset=data.name)
    ev.write_records_csv(os.path.join(out, "results.csv"), records)
    ev.render_scatter(records, os.path.join(out, "delta.svg"), "regime",
                      f"{data.name}: delta per training regime")
    files += ["results.csv", "delta.svg"]
    return {"files": files, "records": records, "calibration": results}


def cmd_matrix(args, argv) -> None:
    cfg = _config(args)
    out = _outdir(args.out)
    res = run_matrix(cfg, out, save_checkpoints=not args.no_checkpoints)
    _print_records(res["records"])
    write_manifest(out, "matrix", argv, cfg, res["files"])


def cmd_ablate(args, argv) -> None:
    cfg = _config(args)
    data = cfg.source().load()
    setup = ev.AblationSetup(cfg.n1, cfg.n2, cfg.sgd(), tuple(k for k in cfg.kinds if k != "A"),
                             cfg.rho, cfg.tolerance, cfg.repeats, cfg.seed, cfg.timing, data.name)

    def make_net():
        return _new_net(cfg, data)

    records = ev.ablate(make_net, data, args.which, setup)
    out = _outdir(args.out)
    name = f"ablation_{args.which}"
    ev.write_records_csv(os.path.join(out, f"{name}.csv"), records)
    ev.render_scatter(records, os.path.join(out, f"{name}.svg"), "regime",
                      f"{data.name}: {args.which.replace('_', ' ')}")
    _print_records(records)
    write_manifest(out, "ablate", argv, cfg, [f"{name}.csv", f"{name}.svg"])


def cmd_report(args, argv) -> None:
    records = ev.read_records_csv(args.results, dataset=args.dataset or "")
    if not records:
        raise ValueError(f"{args.results} holds no records")
    _print_records(records)
    if args.svg:
        ev.render_scatter(records, args.svg, args.grouping, args.title or "")


def cmd_replay(args, argv) -> None:
    with open(args.manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    new_argv = list(doc["argv"])
    tmp = None
    try:
        if doc.get("config"):
            fd, tmp = tempfile.mkstemp(suffix=".cfg")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(doc["config"])
            new_argv += ["--config", tmp]
        new_argv += ["--out", args.out]
        status = main(new_argv)
    finally:
        if tmp:
            os.unlink(tmp)
    if status:
        raise RuntimeError("replayed run failed")
    out_dir = os.path.dirname(os.path.abspath(args.out)) if doc["command"] == "perturb" else args.out
    diff = [n for n, h in doc["outputs"].items()
            if not os.path.exists(os.path.join(out_dir, n))
            or _sha256(os.path.join(out_dir, n)) != h]
    if diff:
        raise RuntimeError(f"replay differs in {', '.join(diff)}")
    print(f"replay identical: {len(doc['outputs'])} outputs")


def _print_records(records) -> None:
    print(f"{'regime':<24}{'train':<7}{'condition':<14}{'acc':>8}{'delta':>9}")
    for r in records:
        print(f"{r.regime:<24}{r.train_kind:<7}{ev.CONDITION_NAMES[r.condition]:<14}"
              f"{r.acc_robust:>8.2f}{r.delta:>+9.2f}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="natpert", description="natural and adversarial "
                                "perturbation training at desk scale")
    p.add_argument("--version", action="version", version=f"natpert {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key=value configuration file")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides the config seed")

    sp = sub.add_parser("train", help="train one regime and write a checkpoint")
    common(sp)
    sp.add_argument("--regime", choices=REGIMES, default="standard")
    sp.add_argument("--kind", help="perturbation kind (E, O, N, W, S, B or a name)")
    sp.add_argument("--checkpoint", help="resume from this checkpoint")
    sp.add_argument("--calibration", help="calibration.csv supplying severities")
    sp.add_argument("--severity", type=float, help="severity (or epsilon) used for every kind")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("calibrate", help="standardise every kind to an equal accuracy drop")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--kinds", help="comma separated, e.g. A,E,O")
    sp.add_argument("--split", default="val")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("attack", help="BIM (or PGD) attack on a data split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--random-start", action="store_true", help="PGD instead of BIM")
    sp.add_argument("--split", default="test")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("perturb", help="apply one natural perturbation to a raw tensor file")
    common(sp)
    sp.add_argument("--kind", required=True)
    sp.add_argument("--severity", type=float, required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser("matrix", help="full experiment: train, calibrate, evaluate, plot")
    common(sp)
    sp.add_argument("--no-checkpoints", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_matrix)

    sp = sub.add_parser("ablate", help="epoch budget, n2 or rho sweep")
    common(sp)
    sp.add_argument("--which", choices=ev.ABLATIONS, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="print a results CSV and optionally plot it")
    sp.add_argument("--results", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--grouping", choices=("regime", "condition", "dataset"), default="regime")
    sp.add_argument("--dataset")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("replay", help="re-run a manifest and verify identical outputs")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"natpert: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"natpert: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
