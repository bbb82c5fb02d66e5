import time

import pytest

from hyperl1.cli import main, read_table

from helpers import ACCEPTANCE


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Desk preset trained for the full 2000 steps; shared by CLI and acceptance tests."""
    out = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    assert main(["train", "--scale", "desk", "--out", str(out), "--quiet"]) == 0
    (out / "train_seconds.txt").write_text(f"{time.perf_counter() - start:.3f}\n")
    return out


@pytest.fixture(scope="session")
def desk_sweep(desk_run):
    assert main(["sweep", "--scale", "desk", "--out", str(desk_run), "--quiet"]) == 0
    return read_table(desk_run / "sweep.csv")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
