import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def fixtures_dir() -> str:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_dir() -> str:
    return os.path.join(FIXTURES, "toy")


@pytest.fixture(scope="session")
def toy_config(toy_dir) -> str:
    return os.path.join(toy_dir, "config.json")
