import numpy as np
import pytest

from sysid.config import bundled_config_path, generic_tires, load_config
from sysid.track_sim import SimConfig, bundled_track, simulate_run
from sysid.vehicle_model import AxleTire, PacejkaParams, VehicleParams


@pytest.fixture(scope="session")
def cfg():
    return load_config(bundled_config_path("default"))


@pytest.fixture(scope="session")
def veh(cfg):
    return cfg.vehicle


@pytest.fixture(scope="session")
def gt(cfg):
    return cfg.tires_gt


@pytest.fixture(scope="session")
def init(veh):
    return generic_tires(veh)


@pytest.fixture(scope="session")
def oval():
    return bundled_track("oval")


@pytest.fixture(scope="session")
def clean_run(oval, veh, gt):
    return simulate_run(oval, veh, gt, SimConfig())


@pytest.fixture(scope="session")
def test_run(oval, veh, gt, cfg):
    return simulate_run(oval, veh, gt, SimConfig(start_offset=cfg.test_offset))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tires_from(values):
    return PacejkaParams(AxleTire(*values[:4]), AxleTire(*values[4:]))


@pytest.fixture
def small_veh():
    # Symmetric toy car used in hand-computed examples.
    return VehicleParams(m=3.5, I_z=0.047, l_f=0.16, l_r=0.16)


@pytest.fixture(scope="session")
def default_report(cfg, clean_run, test_run, init):
    """Six noiseless iterations from the generic guess, shared by several tests."""
    from sysid.bench import identify_config
    from sysid.data_pipeline import preprocess
    from sysid.identification import iterate

    return iterate(preprocess(clean_run), cfg.vehicle, init, identify_config(cfg),
                   test_ds=test_run, tires_true=cfg.tires_gt)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
