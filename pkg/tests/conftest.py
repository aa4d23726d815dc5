import numpy as np
import pytest

from advcast import _jit

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend, restoring the default afterwards."""
    if request.param == "numba" and not _jit.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    previous = _jit.backend()
    _jit.set_backend(request.param)
    yield request.param
    _jit.set_backend(previous)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """``verdict(criterion, ok, detail)`` records one acceptance line and returns ``ok``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
