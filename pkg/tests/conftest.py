import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from loadcast.catalog import builtin_catalog  # noqa: E402


@pytest.fixture(scope="session")
def toy():
    return builtin_catalog("toy")


@pytest.fixture(scope="session")
def default10():
    return builtin_catalog("default10")


@pytest.fixture(scope="session")
def toy_labelled(toy):
    """6000 labelled class-T instances on the toy catalog."""
    from loadcast.instances import DATA_CLASSES, DatasetSpec, generate_labelled

    return generate_labelled(DatasetSpec(DATA_CLASSES["T"], 6000, 11), toy)


@pytest.fixture(scope="session")
def toy_pairs(toy_labelled):
    return [(li.source, li.target) for li in toy_labelled]


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
