import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("measured", "")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    if number not in _CRITERIA or status != "PASS":
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
