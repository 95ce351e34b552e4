"""Shared session fixtures: the default L1 pipeline and the heteroclinic setup."""

from __future__ import annotations

import time
from types import SimpleNamespace

import pytest

from scatmap.cli import build_families, channel_orbits, channel_points, manifold_cuts, perturbation_from_config
from scatmap.config import RunConfig, parse_config
from scatmap.dynamics import EARTH_MOON_MU

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def mu():
    return EARTH_MOON_MU


@pytest.fixture(scope="session")
def cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def l1(cfg):
    """Default L1 family (41 members) with its build time."""
    t = time.perf_counter()
    fam = build_families(cfg)["L1"]
    return SimpleNamespace(family=fam, seconds=time.perf_counter() - t)


@pytest.fixture(scope="session")
def l1_family(l1):
    return l1.family


@pytest.fixture(scope="session")
def channel(cfg, l1_family):
    """Default homoclinic channel: cuts, all points, the selected point and the thrust."""
    ou, os_ = channel_orbits(cfg, {"L1": l1_family})
    cu, cs = manifold_cuts(cfg, ou, os_)
    pts = channel_points(cfg, cu, cs)
    cp = pts[cfg.channel.index]
    return SimpleNamespace(cut_u=cu, cut_s=cs, points=pts, cp=cp, spec=perturbation_from_config(cfg, cp.t0))


@pytest.fixture(scope="session")
def cp(channel):
    return channel.cp


@pytest.fixture(scope="session")
def thrust(channel):
    return channel.spec


@pytest.fixture(scope="session")
def heteroclinic():
    """L1 -> L2 channel above the L2 energy with both families."""
    hcfg = parse_config("[channel]\nkind = heteroclinic\n")
    fams = build_families(hcfg)
    ou, os_ = channel_orbits(hcfg, fams)
    cu, cs = manifold_cuts(hcfg, ou, os_)
    pts = channel_points(hcfg, cu, cs)
    cp = pts[0]
    return SimpleNamespace(cfg=hcfg, families=fams, cut_u=cu, cut_s=cs, points=pts, cp=cp, spec=perturbation_from_config(hcfg, cp.t0))
