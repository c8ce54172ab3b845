import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def platoon():
    from nrfmpc.platoon import build_platoon

    return build_platoon()


@pytest.fixture(scope="session")
def platoon_cl(platoon):
    from nrfmpc.nrf import assemble_closed_loop

    model, layer, _, _ = platoon
    return assemble_closed_loop(model.plant, layer)


@pytest.fixture(scope="session")
def platoon_design(platoon):
    from nrfmpc.design import DesignOptions, run_design

    model, layer, spec, cost = platoon
    return run_design(spec, layer, model.plant, DesignOptions(rho_max=1, T=1, allow_uncertified=True, cost=cost))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
