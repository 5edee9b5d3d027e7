import numpy as np
import pytest

from fredholm_se.quadrature import gauss_legendre_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def gl_grid():
    """Gauss-Legendre grid on the unit interval for closed-form checks."""
    from fredholm_se.examples.analytic import UNIT

    return gauss_legendre_grid(UNIT, UNIT, 200, 200)


# ---------------------------------------------------------------- acceptance summary

_VERDICTS: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; a failure either xfails with ``known`` or fails the test."""

    def record(number: int, passed: bool, detail: str, known: str | None = None):
        _VERDICTS.append((number, passed, detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        if not passed:
            if known is not None:
                pytest.xfail(known)
            pytest.fail(detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
