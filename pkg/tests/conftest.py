import pytest

from hybseq.dataset import DatasetConfig, generate, stratified_split


@pytest.fixture(scope="session")
def small_records():
    """A 6000-pair dataset for module tests."""
    return generate(DatasetConfig(n_roots=60, target_size=6000, seed=11))


@pytest.fixture(scope="session")
def small_splits(small_records):
    return stratified_split(small_records, seed=0)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""
    def record(number, ok, detail):
        line = f"criterion {number:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
