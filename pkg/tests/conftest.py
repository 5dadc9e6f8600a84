import os
import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from locrel.config import SystemConfig  # noqa: E402
from locrel.localization import LocalizationModel  # noqa: E402
from locrel.radiomap import RadioMap, build_map  # noqa: E402

EPS = 1e-3


@pytest.fixture(scope="session")
def cfg():
    return SystemConfig()


@pytest.fixture(scope="session")
def small_cfg():
    # coarse but fast: 2e4 draws resolve eps = 1e-3 at rank 20
    return SystemConfig().replace(**{
        "numerics.map_samples": 20_000,
        "numerics.map_xmin": -150.0,
        "numerics.map_xmax": 1150.0,
        "numerics.bs_select_mc": 2_000,
        "numerics.map_table_levels": 120,
    })


@pytest.fixture(scope="session")
def small_map(small_cfg):
    return build_map(small_cfg)


@pytest.fixture(scope="session")
def full_map(cfg):
    """Default-settings map, built once per session.

    Set LOCREL_MAP_CACHE to a file path to reuse a map between sessions.
    """
    path = os.environ.get("LOCREL_MAP_CACHE")
    if path and os.path.exists(path):
        rmap = RadioMap.load(path)
        if rmap.config_hash == cfg.hash():
            return rmap
    rmap = build_map(cfg)
    if path:
        rmap.save(path)
    return rmap


@pytest.fixture(scope="session")
def loc(cfg):
    return LocalizationModel(cfg)


class ConstSigma:
    """Localization stub: sigma(x; phi) = s everywhere."""

    def __init__(self, s, cfg=None):
        self.s = float(s)
        self.cfg = cfg

    def sigma_grid(self, x, n_nodes=None):
        n = n_nodes or 8
        return np.full((n, n), self.s)

    def sigma_bar(self, xhat):
        return np.full(np.shape(xhat), self.s)


@pytest.fixture
def const_sigma():
    return ConstSigma


@pytest.fixture(scope="session")
def calibrated(full_map, loc, cfg):
    """Backoff and CI selectors calibrated on the default map and grid."""
    from locrel.rateselect import CalibrationSpec, calibrated_selector

    spec = CalibrationSpec.from_config(cfg)
    return {s: calibrated_selector(s, spec, EPS, full_map, loc) for s in ("backoff", "ci")}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(lines[name])
