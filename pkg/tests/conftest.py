from pathlib import Path

import pytest

from care.graphio import parse_tudataset

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mutag():
    return parse_tudataset(DATA / "MUTAG", "MUTAG")
