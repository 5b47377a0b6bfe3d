import numpy as np
import pytest

from comparetab.catalog import Product, Session

ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} [{status}] {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def tiny_catalog():
    return [
        Product(
            id=f"p{i}",
            name=f"widget {i}",
            description=f"a fine widget number {i}",
            categories=("gear", "widget"),
            price=10.0 + i,
            properties={"color": ["red", "blue"][i % 2], "size": str(i % 3)},
        )
        for i in range(6)
    ]


def browse_session(session_id, ids, t0=0.0):
    return Session(
        session_id=session_id,
        kind="browse",
        events=tuple((pid, t0 + i) for i, pid in enumerate(ids)),
    )


def purchase_session(session_id, ids, t0=0.0):
    return Session(
        session_id=session_id,
        kind="purchase",
        events=tuple((pid, t0 + i) for i, pid in enumerate(ids)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
