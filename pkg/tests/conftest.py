import pytest

from gtl.tmto import build_table_set, toy_params

DEFAULT_SEED = 7


@pytest.fixture(scope="session")
def toy_tables():
    """The default TOY table set: 4 tables of 2**16 chains."""
    return build_table_set(toy_params(), tables=4, chain_count=1 << 16, seed=DEFAULT_SEED)


@pytest.fixture(scope="session")
def small_table():
    return build_table_set(toy_params(), tables=1, chain_count=1 << 12, seed=3)[0]


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance(capsys):
    """Record one pass/fail line for an acceptance criterion and echo it."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
