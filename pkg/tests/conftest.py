import pytest

from cfda.funcdata import Grid


@pytest.fixture
def grid():
    return Grid.uniform(101)
