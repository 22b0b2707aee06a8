import pytest

from pinnlab.config import RunConfig

TINY = {
    "network.widths": [3, 8, 8, 5],
    "sampling.n_int": 64, "sampling.n_bdy": 32, "sampling.n_ic": 32, "sampling.slabs": 4,
    "schedule.segments": 4, "schedule.steps_per_segment": 60, "schedule.lr0": 3e-3,
    "evaluation.n_points": 2000, "evaluation.loss_n_int": 512, "evaluation.loss_n_bdy": 128,
    "evaluation.loss_n_ic": 128,
}


@pytest.fixture
def tiny_config(tmp_path):
    return RunConfig().with_overrides({**TINY, "output_dir": str(tmp_path / "run")})


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
