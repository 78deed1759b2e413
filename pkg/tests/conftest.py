import logging

import pytest

from support import fresh_state


@pytest.fixture
def state():
    return fresh_state()


@pytest.fixture(autouse=True)
def quiet_logs(caplog):
    caplog.set_level(logging.WARNING)
    yield
