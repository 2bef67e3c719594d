from pathlib import Path

import hypothesis
import pytest

from laserslot.agent import WhiteboxConfig, serve
from laserslot.transceiver import LaserModel, LogicalClock

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("default", deadline=None)
hypothesis.settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def listing_lines():
    return (DATA / "cmis_listing.log").read_text().splitlines()


@pytest.fixture
def agents():
    """Factory for in-process agents; all are shut down at teardown."""
    started = []

    def start(whitebox_id="wb0", ports=None, clock=None, **kw):
        ports = ports or {"Ethernet0": LaserModel.constant(3.513673)}
        server = serve(WhiteboxConfig(whitebox_id, ports, clock=clock or LogicalClock(), **kw))
        started.append(server)
        return server

    yield start
    for s in started:
        s.shutdown()
