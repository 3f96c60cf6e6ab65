"""Shared fixtures: solved shipped configurations, reused across tests."""
import os

import pytest

from twistdiff.cli_io import load_config, assemble, _refined
from twistdiff.solver import two_step_minimize, uniqueness_monitor

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SHIPPED = ("second_kind_k1", "second_kind_k2", "third_kind_pm1",
           "torus_decoupling", "trivial")


def config_path(name):
    return os.path.join(CONFIG_DIR, f"{name}.yaml")


def solve_config(cfg):
    grid, K0 = assemble(cfg)
    K, report = two_step_minimize(K0, cfg.solver)
    return {"cfg": cfg, "grid": grid, "K0": K0, "K": K, "report": report}


@pytest.fixture(scope="session")
def solved():
    """One solve per shipped config (restarts handled separately)."""
    out = {}
    for name in SHIPPED:
        cfg = load_config(config_path(name))
        cfg.solver.restarts = 0
        out[name] = solve_config(cfg)
    return out


@pytest.fixture(scope="session")
def second_refined():
    """The criterion-1 config solved on the 2x refined grid."""
    cfg = _refined(load_config(config_path("second_kind_k1")))
    return solve_config(cfg)


@pytest.fixture(scope="session")
def torus_monitor(solved):
    """Perturbed-restart monitor on the torus decoupling config."""
    bundle = solved["torus_decoupling"]
    cfg = load_config(config_path("torus_decoupling"))
    assert cfg.solver.restarts == 5
    return uniqueness_monitor(bundle["K0"], cfg.solver)
