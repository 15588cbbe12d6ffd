import pytest

from dicescc.optimizer import ScenarioConstraints, optimize
from dicescc.params import load_params

DESK_CAP = 2.5   # binds at the last desk period

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def desk():
    return load_params("desk")


@pytest.fixture(scope="session")
def dice():
    return load_params("dice2016")


@pytest.fixture(scope="session")
def desk_opt(desk):
    r = optimize(desk, ScenarioConstraints())
    assert r.converged
    return r


@pytest.fixture(scope="session")
def desk_cap_sc():
    return ScenarioConstraints(temp_cap=DESK_CAP)


@pytest.fixture(scope="session")
def desk_cap_opt(desk, desk_cap_sc):
    r = optimize(desk, desk_cap_sc)
    assert r.converged
    return r


@pytest.fixture
def record():
    def _record(n: int, passed: bool, detail: str):
        ACCEPTANCE[n] = (bool(passed), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
