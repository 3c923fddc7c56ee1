import contextlib

import numpy as np
import pytest

from mxray.defaults import default_grid
from mxray.geometry import default_geometry

# (name, outcome, detail); outcome None marks a criterion that cannot be run
_ACCEPTANCE: list[tuple[str, object, str]] = []


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome for the summary."""

    @contextlib.contextmanager
    def record(name: str, detail: str = ""):
        info = {"detail": detail}
        try:
            yield info
        except BaseException:
            _ACCEPTANCE.append((name, False, info["detail"]))
            raise
        _ACCEPTANCE.append((name, True, info["detail"]))

    record.not_applicable = lambda name, detail: _ACCEPTANCE.append((name, None, detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        tag = "N/A" if ok is None else ("PASS" if ok else "FAIL")
        line = f"[{tag}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def geom():
    return default_geometry()


@pytest.fixture(scope="session")
def small_grid(geom):
    return default_grid(geom, (12, 10, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
