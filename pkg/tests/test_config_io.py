import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatmap.config import ConfigError, RunConfig, parse_config
from scatmap.dynamics import EARTH_MOON_MU
from scatmap.io import ArtifactError, as_float, jsonable, read_artifact, write_artifact, write_csv


def test_defaults():
    c = RunConfig()
    assert c.system.mu == EARTH_MOON_MU and c.family.n_members == 41
    assert c.manifold.section == "interior" and c.manifold.crossing == 2 and c.manifold.sign_u == 1
    assert c.validation.eps_grid == (1e-2, 3e-3, 1e-3, 3e-4)
    assert parse_config("").to_dict() == c.to_dict()


def test_heteroclinic_resolves_section():
    c = parse_config("[channel]\nkind = heteroclinic\n")
    assert c.manifold.section == "moon" and c.manifold.sign_u == -1 and c.manifold.sign_s == 1
    c = parse_config("[channel]\nkind = heteroclinic\n[manifold]\nsection = moon-lower\nsign_u = 1\n")
    assert c.manifold.section == "moon-lower" and c.manifold.sign_u == 1


def test_values_are_parsed_at_full_precision():
    c = parse_config(
        "[system]\nmu = 0.0121505856  # Earth-Moon\n"
        "[perturbation]\ndirection = 0.6, 0.8\nwindowed = yes\n"
        "[validation]\neps_grid = 1e-2; 1e-3, 1e-4, 1e-5\n"
        "[channel]\nseed = 0.3, -2.1\n"
    )
    assert c.system.mu == 0.0121505856
    assert c.perturbation.direction == (0.6, 0.8)
    assert c.validation.eps_grid == (1e-2, 1e-3, 1e-4, 1e-5)
    assert c.channel.seed == (0.3, -2.1)


@pytest.mark.parametrize(
    "text",
    [
        "[nonsense]\nx = 1\n",
        "[system]\nmass = 1\n",
        "[system]\nmu = abc\n",
        "[system]\nmu = 0.7\n",
        "[family]\nn_members = 2.5\n",
        "[family]\noffset_min = 1e-2\noffset_max = 1e-3\n",
        "[perturbation]\nwindowed = maybe\n",
        "[perturbation]\nwindowed = false\n",
        "[validation]\neps_grid = 1e-2, 1e-3\n",
        "[manifold]\nsign_u = 2\n",
        "no section header\n",
    ],
)
def test_malformed_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_artifact_round_trip(tmp_path):
    p = tmp_path / "a.json"
    payload = {"x": np.float64(0.1), "v": np.arange(3.0), "bad": [math.inf, math.nan], "t": (1, 2)}
    h = write_artifact(p, "demo", payload, {"up": "abc"})
    doc = read_artifact(p, "demo")
    assert doc["hash"] == h and doc["payload"]["x"] == 0.1
    assert [as_float(x) for x in doc["payload"]["bad"]][0] == math.inf
    assert math.isnan(as_float(doc["payload"]["bad"][1]))
    # identical content gives identical bytes
    first = p.read_bytes()
    write_artifact(p, "demo", payload, {"up": "abc"})
    assert p.read_bytes() == first
    assert not list(tmp_path.glob(".*.tmp"))


def test_artifact_errors(tmp_path):
    p = tmp_path / "a.json"
    write_artifact(p, "demo", {"x": 1.0})
    with pytest.raises(ArtifactError):
        read_artifact(p, "other")
    doc = json.loads(p.read_text())
    doc["payload"]["x"] = 2.0
    p.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError, match="hash"):
        read_artifact(p)
    with pytest.raises(ArtifactError):
        read_artifact(tmp_path / "missing.json")
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(ArtifactError):
        read_artifact(tmp_path / "junk.json")


def test_jsonable_and_csv(tmp_path):
    assert jsonable({1: np.int64(3), "b": np.bool_(True)}) == {"1": 3, "b": True}
    p = write_csv(tmp_path / "s.csv", ["eps", "err"], [(0.1, np.float64(1.0 / 3.0)), (1e-3, 2)])
    lines = p.read_text().splitlines()
    assert lines == ["eps,err", "0.1,0.3333333333333333", "0.001,2"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=8), st.floats())
def test_float_payloads_round_trip_exactly(tmp_path_factory, xs, y):
    p = tmp_path_factory.mktemp("prop") / "a.json"
    write_artifact(p, "demo", {"xs": xs, "y": y})
    got = read_artifact(p)["payload"]
    assert got["xs"] == xs
    assert as_float(got["y"]) == y or (math.isnan(y) and math.isnan(as_float(got["y"])))
