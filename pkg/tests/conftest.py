import numpy as np
import pytest

from mwem.domain import AttributeSchema, RecordTable, Universe, histogram_from_records


def correlated_rows(n, d, rng, flip=0.1):
    """Binary records where attribute pairs (0,1), (2,3), ... share a latent bit."""
    z = rng.random((n, (d + 1) // 2)) < 0.5
    x = np.repeat(z, 2, axis=1)[:, :d] ^ (rng.random((n, d)) < flip)
    return x.astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_table(rng):
    schema = AttributeSchema.binary(4)
    return RecordTable(schema, correlated_rows(400, 4, rng))


@pytest.fixture
def small_hist(small_table):
    return histogram_from_records(small_table)


@pytest.fixture
def mixed_schema():
    return AttributeSchema(("a", "b", "c"), (3, 2, 4))


@pytest.fixture
def mixed_universe(mixed_schema):
    return Universe(mixed_schema)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
