import pytest

# small enough to run the whole CLI pipeline in seconds
TINY_CONFIG = """\
n_train=300
n_val=90
n_test=90
conv_channels=8
n1=8
n2=1
attack_steps=2
rho=6
tolerance=2
max_evals=20
kinds=A,N,B
"""


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


def _run_matrix(out, config_text=None):
    import time

    from natpert.cli import main

    argv = ["matrix", "--out", str(out)]
    if config_text is not None:
        cfg = out.parent / f"{out.name}.cfg"
        cfg.write_text(config_text, encoding="utf-8")
        argv += ["--config", str(cfg)]
    t0 = time.perf_counter()
    assert main(argv) == 0, "matrix run failed"
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_matrix(tmp_path_factory):
    """Full default pipeline on the bundled synthetic data; (out dir, seconds)."""
    return _run_matrix(tmp_path_factory.mktemp("desk") / "matrix")


@pytest.fixture(scope="session")
def cifar_matrix(tmp_path_factory):
    """Same pipeline on a CIFAR-10 subset; needs NPT_CIFAR10_DIR."""
    import os

    path = os.environ.get("NPT_CIFAR10_DIR")
    if not path:
        pytest.skip("CIFAR-10 binary batches not available (set NPT_CIFAR10_DIR)")
    text = (f"dataset=cifar10_binary\ndata_path={path}\n"
            "n_train=5000\nn_val=1000\nn_test=2000\n")
    return _run_matrix(tmp_path_factory.mktemp("cifar") / "matrix", text)
