import numpy as np
import pytest

from morphquad import config as cfgmod
from morphquad import geometry as geo


def pytest_configure(config):
    config.acceptance = {}


class _Criterion:
    def __init__(self, table, number, title):
        self.table = table
        self.number = number
        self.title = title

    def __enter__(self):
        self.table.setdefault(self.number, [self.title, []])
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = "" if ok else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        self.table[self.number][1].append((ok, detail))
        print(f"criterion {self.number} ({self.title}): {'PASS' if ok else 'FAIL'} {detail}")
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title): ...`` records a pass/fail part for criterion ``n``."""
    return lambda number, title: _Criterion(request.config.acceptance, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = getattr(config, "acceptance", {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        title, parts = table[number]
        ok = all(p[0] for p in parts)
        detail = "; ".join(d for good, d in parts if not good)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}" + (f"  ({detail})" if detail else ""))


@pytest.fixture(scope="session")
def layout():
    return cfgmod.layout_from_config(cfgmod.load_config())


@pytest.fixture(scope="session")
def geometry(layout):
    return layout.build()


@pytest.fixture(scope="session")
def props_large(geometry):
    return geo.total_inertia(geometry, geo.L_MAX)


@pytest.fixture(scope="session")
def props_small(geometry):
    return geo.total_inertia(geometry, geo.L_MIN)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
