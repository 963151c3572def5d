import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natpert import calibrate as cal
from natpert.adversarial import AttackConfig
from natpert.datasets import synthetic_splits
from natpert.model import SgdConfig, SmallConvNet, init_params
from natpert.perturb import PerturbationSpec
from natpert.schedules import TrainSchedule, train

from oracles import StubNet


def test_closed_form_response():
    def rho(s, seeds):
        return min(100.0, 20.0 * s)
    status, s, d, probes = cal.bisect_drop(rho, 10.0, 0.5, 4.0, seed_fn=lambda i: (i,),
                                           final_seeds=(99,))
    assert status == "ok"
    assert abs(s - 0.5) <= 0.5 / 20
    assert abs(d - 10.0) <= 0.5
    assert len(probes) <= 30


@given(st.floats(2, 80), st.floats(0.2, 2.0), st.floats(0.5, 30))
@settings(max_examples=60, deadline=None)
def test_linear_responses_converge(slope, tol, target):
    s_max = 100.0 / slope

    def rho(s, seeds):
        return slope * s
    status, s, d, _ = cal.bisect_drop(rho, target, tol, s_max, final_seeds=(0,))
    assert status == "ok"
    assert abs(d - target) <= tol
    assert abs(s - target / slope) <= tol / slope + 1e-12


def test_noisy_response_accepts_only_reported_seeds():
    # noise depends on the seeds; the accepted value must be a final-seed measurement
    def rho(s, seeds):
        noise = np.mean([np.random.default_rng(x).normal(0, 0.6) for x in seeds])
        return min(100.0, 20.0 * s) + noise
    final = (1001, 1002, 1003)
    status, s, d, probes = cal.bisect_drop(rho, 10.0, 0.5, 4.0,
                                           seed_fn=lambda i: (3 * i, 3 * i + 1, 3 * i + 2),
                                           final_seeds=final)
    assert status == "ok"
    assert d == pytest.approx(rho(s, final))
    assert probes[-1][2] is True


def test_unreachable_target():
    with pytest.raises(cal.CalibrationError, match="unreachable"):
        cal.bisect_drop(lambda s, seeds: 2.0 * s, 10.0, 0.5, 1.0)


def test_non_monotone_is_flagged():
    status, s, d, probes = cal.bisect_drop(
        lambda s, seeds: 30.0 if s == 1.0 else 50.0, 10.0, 0.5, 1.0, final_seeds=(0,))
    assert status == "non-monotone"
    assert len(probes) == 30


def test_step_response_runs_out_of_evals():
    status, s, d, probes = cal.bisect_drop(
        lambda s, seeds: 0.0 if s < 0.5 else 20.0, 10.0, 0.5, 1.0, final_seeds=(0,))
    assert status == "max-evals"
    assert len(probes) == 30
    assert d in (0.0, 20.0)


def test_measure_drop_one_of_four(monkeypatch):
    labels = np.array([0, 1, 2, 3])
    x = np.arange(4.0).reshape(4, 1)
    net = StubNet([0, 1, 2, 3, 0], num_classes=4)

    def flip_last(net, images, labels, condition, seed, indices=None):
        out = images.copy()
        out[3] = 4.0  # the stub predicts class 0 for input 4
        return out
    monkeypatch.setattr(cal, "perturb_images", flip_last)
    drop = cal.measure_drop(net, x, labels, PerturbationSpec("N", 0.1), seeds=(0, 1, 2))
    assert drop == 25.0


def test_measure_drop_level_zero_and_errors():
    net = StubNet([0, 1], 2)
    x, y = np.arange(2.0).reshape(2, 1), np.array([0, 1])
    assert cal.measure_drop(net, x, y, PerturbationSpec("N", 0.0), (0,)) == 0.0
    assert cal.measure_drop(net, x, y, AttackConfig(0.0), (0,)) == 0.0
    with pytest.raises(ValueError):
        cal.measure_drop(net, x[:0], y[:0], PerturbationSpec("N", 0.1), (0,))
    with pytest.raises(ValueError):
        cal.measure_drop(net, x, y, PerturbationSpec("N", 0.1), ())


def test_condition_helpers():
    c = cal.condition_for("A", 0.02)
    assert isinstance(c, AttackConfig) and c.steps == 10 and not cal.is_stochastic(c)
    n = cal.condition_for("N", 0.3)
    assert cal.condition_kind(n) == "N" and cal.condition_level(n) == 0.3
    base = PerturbationSpec("W", 0.0, wave_frequency=3.0)
    assert cal.condition_for("W", 1.0, base).wave_frequency == 3.0


@pytest.fixture(scope="module")
def small_net():
    d = synthetic_splits(600, 240, 30, seed=3)
    net = SmallConvNet(d.image_shape, 3, (4,))
    init_params(net, 0)
    train(net, *d.train, TrainSchedule("standard", 8, 0, SgdConfig(lr=0.01, batch_size=32), 0))
    return net, d


def test_target_zero(small_net):
    net, d = small_net
    r = cal.calibrate_severity(net, *d.val, "N", target=0.0)
    assert r.severity == 0.0 and r.deviation == 0.0 and r.ok


@pytest.mark.parametrize("kind", ["N", "B"])
def test_calibrate_real_net_reproducible(small_net, kind):
    net, d = small_net
    a = cal.calibrate_severity(net, *d.val, kind, target=8.0, tolerance=1.0, seed=4)
    b = cal.calibrate_severity(net, *d.val, kind, target=8.0, tolerance=1.0, seed=4)
    assert a.ok and a.deviation <= 1.0
    assert a.severity == b.severity and a.drop == b.drop
    assert len(a.seeds) == 3
    # the reported drop is the mean over the reported seeds
    assert a.drop == pytest.approx(cal.measure_drop(net, *d.val, a.condition(), a.seeds))


def test_calibrate_unreachable_raises(small_net):
    net, d = small_net
    with pytest.raises(cal.CalibrationError):
        cal.calibrate_severity(net, *d.val, "N", target=10.0, s_max=1e-4)


def _result(kind, sev, drop):
    return cal.CalibrationResult(kind, sev, drop, 10.0, 0.5, 7, 3, (1, 2, 3))


def test_report_order_and_csv(tmp_path):
    results = [_result(k, 0.1 * i, 10 + 0.01 * i) for i, k in enumerate("BSWNOEA")]
    rows = cal.standardization_report(results, {k: float(i) for i, k in enumerate("AEONWSB")})
    assert [r["kind"] for r in rows] == list("AEONWSB")
    assert rows[0]["mse"] == 0.0
    text = cal.format_report(rows)
    assert text.splitlines()[1].startswith("A")
    cal.write_calibration_csv(tmp_path / "c.csv", results)
    back = cal.read_calibration_csv(tmp_path / "c.csv")
    assert back["B"] == (0.0, 10.0)
    assert back["A"][0] == 0.1 * 6
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "kind,severity,drop,deviation,evals,seed"
    with pytest.raises(ValueError):
        cal.standardization_report([], {})


def test_result_properties():
    r = _result("E", 3.0, 10.4)
    assert r.deviation == pytest.approx(0.4) and r.ok
    assert r.condition().severity == 3.0
