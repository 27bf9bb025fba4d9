from __future__ import annotations

import json
import sys
from importlib.resources import files
from pathlib import Path

import pytest

from crowdroute.model import IndoorCrowdModel, load_model

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def fixture_document(name: str) -> dict:
    return json.loads(files("crowdroute").joinpath(f"data/{name}.json").read_text(encoding="utf-8"))


def fixture_model(name: str) -> IndoorCrowdModel:
    return load_model(fixture_document(name))


@pytest.fixture(scope="session")
def fig1() -> IndoorCrowdModel:
    return fixture_model("fig1")


@pytest.fixture(scope="session")
def fig4() -> IndoorCrowdModel:
    return fixture_model("fig4")


@pytest.fixture(scope="session")
def appendix() -> IndoorCrowdModel:
    return fixture_model("appendix")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item: pytest.Item, call: pytest.CallInfo):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else "FAIL"
        if n not in _ACCEPTANCE or status == "FAIL":
            _ACCEPTANCE[n] = (status, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
