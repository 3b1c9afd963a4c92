import sys

import pytest

from drainsim.core import DeviceProfile
from drainsim.dataset import TRIO, paper_model, paper_registry, trio_profile
from drainsim.harness import full_access_profile
from drainsim.plan import Goal, simple_plan


@pytest.fixture(scope="session")
def registry():
    return paper_registry()


@pytest.fixture(scope="session")
def model():
    return paper_model()


@pytest.fixture
def trio_full():
    return simple_plan(TRIO, Goal("full_drain"), name="trio")


@pytest.fixture
def trio_five():
    return simple_plan(TRIO, Goal("partial_drain", 5.0), name="trio")


@pytest.fixture
def open_profile(registry):
    return full_access_profile(registry)


@pytest.fixture
def flash_profile():
    return trio_profile()


@pytest.fixture
def bare_profile():
    return DeviceProfile()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in module.TITLES.items():
        parts = module.RESULTS.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  {title}")
            continue
        ok = all(p[0] for p in parts)
        details = "; ".join(f"{name + ' ' if name else ''}{'ok' if good else 'FAILED'}{': ' + d if d else ''}"
                            for good, name, d in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{details}]")
