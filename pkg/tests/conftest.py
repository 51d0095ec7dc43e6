from typing import Iterator

import pytest

from tests.scenes import room_doc, two_room_doc
from topv.mock_server import MockServer
from topv.worldsim import Scene, scene_from_dict


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "slow: full episodes and benchmarks")


@pytest.fixture
def room() -> Scene:
    return scene_from_dict(room_doc())


@pytest.fixture
def two_rooms() -> Scene:
    return scene_from_dict(two_room_doc())


@pytest.fixture
def mock_server() -> Iterator[MockServer]:
    with MockServer() as server:
        yield server


@pytest.fixture
def failing_server() -> Iterator[MockServer]:
    with MockServer(mode="fail") as server:
        yield server


@pytest.fixture
def garbage_server() -> Iterator[MockServer]:
    with MockServer(mode="garbage") as server:
        yield server
