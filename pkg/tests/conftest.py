import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slice_arena import (DataCenterSpec, ResourceVector, ScenarioConfig,
                         SliceSpec, TrafficProfile, load_config,
                         paper_config_path)

PAPER_PROFILE = TrafficProfile(mean_arrival_rate=1.0, mean_service_rate=2.0,
                               delay_budget=1.07)


def make_dc(dc_id="dc1", cpu=32.0, memory=50.0, storage=5000.0,
            power=(100.0, 200.0)):
    return DataCenterSpec(dc_id=dc_id,
                          capacity=ResourceVector(cpu, memory, storage),
                          power_range=power)


def make_slice(slice_id="s1", priority=1.0, demand=(2.0, 7.0, 30.0),
               arrival_mean=1.0, departure_prob=0.3, chain_capacity=8,
               profile=PAPER_PROFILE):
    return SliceSpec(slice_id=slice_id, priority=priority,
                     demand=ResourceVector(*demand), profile=profile,
                     arrival_mean=arrival_mean, departure_prob=departure_prob,
                     chain_capacity=chain_capacity)


def make_scenario(datacenters=None, slices=None, **kwargs):
    if datacenters is None:
        datacenters = (make_dc("dc1"), make_dc("dc2"))
    if slices is None:
        slices = (make_slice(),)
    return ScenarioConfig(datacenters=tuple(datacenters), slices=tuple(slices),
                          **kwargs)


@pytest.fixture(scope="session")
def paper_cfg():
    return load_config(paper_config_path())
