import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere_run():
    """A short training run on the sphere family, shared by the slow tests."""
    from svmshape.trainer import TaskDataset, TrainConfig, train

    data = TaskDataset.generate("sphere", 60, seed=0)
    cfg = TrainConfig(family="sphere", n_shapes=60, lr=1e-3, steps=300, batch_tasks=8, seed=0)
    return train(cfg, data).checkpoint.params, data


_criteria: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        outcome = "skipped" if report.skipped else "passed" if report.passed else "failed"
        _criteria.setdefault(mark.args[0], []).append((item.name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        failed = [name for name, outcome in results if outcome == "failed"]
        ran = [name for name, outcome in results if outcome != "skipped"]
        verdict = "FAIL" if failed else "PASS" if ran else "SKIP"
        detail = f"failed: {', '.join(failed)}" if failed else f"{len(ran)} test(s)"
        terminalreporter.write_line(f"criterion {n:2d}: {verdict} ({detail})")
