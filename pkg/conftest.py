"""
Shared fixtures for the relay-stability tests
"""
import json

import numpy as np
import pytest

from models.schemas import RadioConfig
from services.channel import LinkStateProbs, SsLinks
from services.region_ss import SsScenario

RADIO = {
    "ul_power": 0.25,
    "dl_power": 40.0,
    "ul_noise_density": -199.0,
    "dl_noise_density": -195.0,
    "rb_bandwidth": 180e3,
    "rb_count": 50,
    "pathloss_exponent": 3.76,
    "pathloss_offset_db": 128.1,
    "reference_distance": 1000.0,
    "ul_thresholds": [9.5, 2.5],
    "dl_thresholds": [7.5, 1.5],
}


def random_links(rng: np.random.Generator) -> SsLinks:
    """Three-state links with every state probability bounded away from 0"""
    def one():
        p = rng.dirichlet([2.0, 2.0, 2.0])
        p = 0.05 + 0.85 * p
        return LinkStateProbs(tuple(p / p.sum()))
    return SsLinks(one(), one(), one())


def fixed_links() -> SsLinks:
    return SsLinks(
        LinkStateProbs((0.5, 0.3, 0.2)),
        LinkStateProbs((0.4, 0.3, 0.3)),
        LinkStateProbs((0.8, 0.15, 0.05)),
    )


def scenario_doc(name: str, kind: str = "ss", **overrides) -> dict:
    """Scenario document at 350 m; top-level sections can be overridden"""
    doc = {
        "name": name,
        "radio": dict(RADIO),
        "geometry": {"distance": 350.0},
        "rates": {"r1": 400.0, "r2": 200.0, "k": 2},
        "scenario": {"kind": kind},
        "sweep": {"grid": 3},
    }
    if kind == "mu":
        doc["rates"] = {"r1": 1.0, "unit": "normalized"}
        doc["scenario"] = {"kind": "mu", "K": 2, "U": 1}
    doc.update(overrides)
    return doc


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def radio_cfg():
    return RadioConfig(**RADIO)


@pytest.fixture
def links():
    return fixed_links()


@pytest.fixture
def sc2():
    return SsScenario(links=fixed_links(), r2=1.0, k=2)


@pytest.fixture
def sc1():
    return SsScenario(links=fixed_links(), r2=1.0, k=1)


@pytest.fixture
def write_doc(tmp_path):
    """Write a scenario document into tmp_path and return its path"""
    def _write(doc: dict) -> str:
        path = tmp_path / f"{doc['name']}.json"
        path.write_text(json.dumps(doc))
        return str(path)
    return _write
