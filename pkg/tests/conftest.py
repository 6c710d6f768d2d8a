import pytest

from double_harness.simcore import Scheduler
from double_harness.suites import build_virtual_rig


@pytest.fixture
def sched() -> Scheduler:
    return Scheduler()


@pytest.fixture
def rig():
    rig = build_virtual_rig()
    yield rig
    rig.close()
