import numpy as np
import pytest

from natpert import storage
from natpert.adversarial import AttackConfig
from natpert.datasets import synthetic_splits
from natpert.model import SgdConfig, SmallConvNet, init_params
from natpert.perturb import PerturbationSpec
from natpert.schedules import (TrainSchedule, TrainState, adversarial_train,
                               data_augmentation_train, multi_perturbation_train,
                               natural_perturbed_train, standard_train, train, write_log_csv)

SGD = SgdConfig(lr=0.02, momentum=0.9, batch_size=16)


@pytest.fixture(scope="module")
def data():
    return synthetic_splits(64, 16, 16, seed=2)


def _net(seed=0):
    net = SmallConvNet((3, 32, 32), 3, (4,))
    init_params(net, seed)
    return net


def _params(net):
    return {k: v.data.copy() for k, v in net.params.items()}


def _same(a, b):
    return all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_zero_epochs_unchanged(data):
    net = _net()
    before = _params(net)
    assert standard_train(net, *data.train, TrainSchedule("standard", 0, 0, SGD)) == []
    assert _same(before, _params(net))


def test_fixed_seed_bit_identical_checkpoints(data):
    blobs = []
    for _ in range(2):
        net, state = _net(), TrainState()
        train(net, *data.train, TrainSchedule("standard", 2, 0, SGD, seed=5), state=state)
        blobs.append(storage.encode_checkpoint(
            storage.checkpoint_from_net(net, state.epoch, state.momentum)))
    assert blobs[0] == blobs[1]


def test_natural_with_no_mixed_epochs_is_standard(data):
    a, b = _net(), _net()
    standard_train(a, *data.train, TrainSchedule("standard", 2, 0, SGD, seed=1))
    natural_perturbed_train(b, *data.train, TrainSchedule(
        "natural", 2, 0, SGD, seed=1, specs=(PerturbationSpec("B", 1.0),)))
    assert _same(_params(a), _params(b))


@pytest.mark.parametrize("regime,specs", [
    ("natural", (PerturbationSpec("E", 0.0),)),
    ("augment", (PerturbationSpec("N", 0.0),)),
    ("multi", (PerturbationSpec("E", 0.0), PerturbationSpec("O", 0.0),
               PerturbationSpec("N", 0.0), PerturbationSpec("S", 0.0))),
])
def test_severity_zero_follows_standard_trajectory(data, regime, specs):
    a, b = _net(), _net()
    log_a = train(a, *data.train, TrainSchedule("standard", 3, 0, SGD, seed=1))
    n1 = 0 if regime == "augment" else 1
    log_b = train(b, *data.train, TrainSchedule(regime, n1, 3 - n1, SGD, seed=1, specs=specs))
    for ea, eb in zip(log_a, log_b):
        lb = eb.loss_perturbed if regime == "augment" else eb.loss_clean
        assert abs(ea.loss_clean - lb) < 1e-6
    pa, pb = _params(a), _params(b)
    for k in pa:
        np.testing.assert_allclose(pa[k], pb[k], atol=1e-6, rtol=0)


def test_adversarial_zero_budget_doubles_gradient(data):
    a, b = _net(), _net()
    sgd1 = SgdConfig(lr=0.02, momentum=0.0, batch_size=16)
    sgd2 = SgdConfig(lr=0.01, momentum=0.0, batch_size=16)
    train(a, *data.train, TrainSchedule("standard", 1, 0, sgd1, seed=1))
    train(b, *data.train, TrainSchedule("adversarial", 0, 1, sgd2, seed=1,
                                        attack=AttackConfig(0.0, random_start=True)))
    pa, pb = _params(a), _params(b)
    for k in pa:
        np.testing.assert_allclose(pa[k], pb[k], atol=1e-6, rtol=0)


def test_gradient_steps_per_adversarial_epoch(data):
    k = 3
    log = train(_net(), *data.train, TrainSchedule(
        "adversarial", 1, 1, SGD, seed=0, attack=AttackConfig(0.03, steps=k, random_start=True)))
    clean, mixed = log
    assert not clean.mixed and mixed.mixed
    assert clean.grad_steps == 4  # 64 images / batch 16
    assert mixed.grad_steps == (k + 1) * clean.grad_steps


def test_resume_matches_uninterrupted_run(data):
    sched = TrainSchedule("natural", 1, 2, SGD, seed=3, specs=(PerturbationSpec("N", 0.1),))
    a = _net()
    train(a, *data.train, sched)
    b, state = _net(), TrainState()
    train(b, *data.train, TrainSchedule("standard", 1, 0, SGD, seed=3), state=state)
    blob = storage.encode_checkpoint(storage.checkpoint_from_net(b, state.epoch, state.momentum))
    ck = storage.decode_checkpoint(blob)
    c = storage.net_from_checkpoint(ck)
    train(c, *data.train, sched, state=TrainState(ck.epoch, dict(ck.momentum)))
    assert _same(_params(a), _params(c))


def test_fresh_perturbations_each_epoch(data):
    # identical parameters, different epoch index -> different perturbed loss
    spec = PerturbationSpec("N", 0.2)
    s = TrainSchedule("augment", 0, 2, SgdConfig(lr=1e-9, momentum=0.0, batch_size=64),
                      seed=0, specs=(spec,))
    log = train(_net(), *data.train, s)
    assert log[0].loss_perturbed != log[1].loss_perturbed


def test_natural_loss_is_average_of_terms(data):
    s = TrainSchedule("natural", 0, 1, SgdConfig(lr=1e-9, momentum=0.0, batch_size=64),
                      seed=0, specs=(PerturbationSpec("N", 0.3),))
    entry = train(_net(), *data.train, s)[0]
    assert entry.mixed and np.isfinite(entry.loss_perturbed)
    assert entry.loss_perturbed != entry.loss_clean


def test_validation():
    with pytest.raises(ValueError):
        TrainSchedule("standard", 1, 1)
    with pytest.raises(ValueError):
        TrainSchedule("natural", 1, 1)
    with pytest.raises(ValueError):
        TrainSchedule("multi", 1, 1, specs=(PerturbationSpec("E", 1.0),))
    with pytest.raises(ValueError):
        TrainSchedule("adversarial", 1, 1)
    with pytest.raises(ValueError):
        TrainSchedule("adversarial", 1, 1, attack=AttackConfig(0.1))
    with pytest.raises(ValueError):
        TrainSchedule("bogus")
    s = TrainSchedule("multi", 2, 3, specs=(PerturbationSpec("E", 1.0), PerturbationSpec("S", .5)))
    assert s.epochs == 5 and s.train_kinds == "ES"


def test_wrappers_check_regime(data):
    s = TrainSchedule("standard", 0, 0)
    for fn in (natural_perturbed_train, adversarial_train, data_augmentation_train,
               multi_perturbation_train):
        with pytest.raises(ValueError):
            fn(_net(), *data.train, s)


def test_log_csv_without_timing(tmp_path, data):
    log = train(_net(), *data.train, TrainSchedule("standard", 1, 0, SGD), val=tuple(data.val))
    write_log_csv(tmp_path / "a.csv", log, timing=False)
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,regime,loss_clean,loss_perturbed,val_accuracy,seconds"
    assert lines[1].endswith(",0.000")
