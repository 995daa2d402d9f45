import numpy as np
import pytest

from wearagen.cohort import CohortConfig, simulate_cohort
from wearagen.data import clean_cohort, fit_scaler, make_cohort_windows
from wearagen.model import ModelConfig, init_params

_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): acceptance criterion with summary line")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _ACCEPTANCE.append((marker.args[0], status))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(f"[{status}] {name}")


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, np.random.default_rng(0), dtype=np.float64)


@pytest.fixture(scope="session")
def small_cohort():
    cohort = simulate_cohort(CohortConfig(num_individuals=12, num_days=84, seed=3))
    cleaned, _ = clean_cohort(cohort)
    return cleaned


@pytest.fixture(scope="session")
def small_spec(small_cohort):
    return fit_scaler(small_cohort)


@pytest.fixture(scope="session")
def small_windows(small_cohort, small_spec):
    return make_cohort_windows(small_cohort, small_spec)
