import numpy as np
import pytest

from demoire.synth import build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 train / 4 val / 4 test samples at 64x64, shared read-only across tests."""
    root = tmp_path_factory.mktemp("tiny_data")
    build_dataset(root, 8, 4, 4, size=64, seed=7)
    return root


# --- acceptance report --------------------------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): headline acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.failed:
        reason = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"
        detail = f"{detail}; {reason}" if detail else reason
    _CRITERIA[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {name}: {detail}")
