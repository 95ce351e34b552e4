import json

import pytest

from scatmap.cli import EXIT_OK, EXIT_PRECONDITION, run
from scatmap.io import read_artifact, write_artifact
from scatmap.manifolds import channel_point_to_dict
from scatmap.periodic_orbits import family_to_dict

SMALL_FAMILY = "[family]\nn_members = 5\noffset_max = 1e-3\n"


def _config(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def upstream(tmp_path_factory, cfg, l1_family, channel):
    """Family and channel artifacts written from the session fixtures."""
    d = tmp_path_factory.mktemp("upstream")
    fh = write_artifact(d / "family.json", "family", {"config": cfg.to_dict(), "families": {"L1": family_to_dict(l1_family)}, "primary": "L1"})
    payload = {"config": cfg.to_dict(), "points": [channel_point_to_dict(c) for c in channel.points], "selected": 0}
    write_artifact(d / "channel.json", "channel", payload, {"family": fh})
    write_artifact(d / "stale_channel.json", "channel", payload, {"family": "0" * 64})
    return d


def test_equilibria_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["equilibria", "--out", str(a)]) == EXIT_OK
    assert run(["equilibria", "--out", str(b)]) == EXIT_OK
    for f in ("equilibria.json", "equilibria.csv", "equilibria_summary.txt"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert "saddle-center condition holds" in (a / "equilibria_summary.txt").read_text()


def test_equilibria_at_equal_masses(tmp_path):
    assert run(["equilibria", "--config", _config(tmp_path, "[system]\nmu = 0.5\n"), "--out", str(tmp_path)]) == EXIT_OK
    doc = read_artifact(tmp_path / "equilibria.json", "equilibria")
    assert doc["payload"]["saddle_center"] is True


def test_family_rerun_is_byte_identical(tmp_path):
    c = _config(tmp_path, SMALL_FAMILY)
    for d in ("a", "b"):
        assert run(["family", "--config", c, "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "family.json").read_bytes() == (tmp_path / "b" / "family.json").read_bytes()
    checks = read_artifact(tmp_path / "a" / "family.json", "family")["payload"]["checks"]["L1"]
    assert checks["closure"] < 1e-10 and checks["multiplier_product_error"] < 1e-8


def test_precondition_failures_exit_2(tmp_path, upstream):
    out = str(tmp_path)
    assert run(["family", "--config", _config(tmp_path, "[family]\nbogus = 1\n"), "--out", out]) == EXIT_PRECONDITION
    assert run(["family", "--config", str(tmp_path / "missing.ini"), "--out", out]) == EXIT_PRECONDITION
    assert run(["manifolds", "--out", out]) == EXIT_PRECONDITION
    assert run(["nonsense"]) == EXIT_PRECONDITION
    fam = str(upstream / "family.json")
    assert run(["melnikov", "--out", out, "--input", fam, fam]) == EXIT_PRECONDITION
    # channel built from another family artifact
    assert run(["melnikov", "--out", out, "--input", fam, str(upstream / "stale_channel.json")]) == EXIT_PRECONDITION
    # configuration disagrees with the artifacts
    other_mu = _config(tmp_path, "[system]\nmu = 0.012\n", "mu.ini")
    assert run(["melnikov", "--config", other_mu, "--out", out, "--input", fam, str(upstream / "channel.json")]) == EXIT_PRECONDITION


def test_edited_artifact_is_refused(tmp_path, upstream):
    doc = json.loads((upstream / "family.json").read_text())
    doc["payload"]["primary"] = "L2"
    p = tmp_path / "family.json"
    p.write_text(json.dumps(doc))
    assert run(["manifolds", "--out", str(tmp_path), "--input", str(p)]) == EXIT_PRECONDITION


def test_zero_perturbation_melnikov_and_validate(tmp_path, upstream):
    c = _config(tmp_path, "[perturbation]\nkind = zero\n")
    ins = [str(upstream / "family.json"), str(upstream / "channel.json")]
    assert run(["melnikov", "--config", c, "--out", str(tmp_path), "--input", *ins]) == EXIT_OK
    doc = read_artifact(tmp_path / "melnikov.json", "melnikov")
    assert doc["payload"]["result"]["S_I"] == 0.0 and doc["payload"]["result"]["S_theta"] == 0.0
    assert doc["inputs"]["channel"] == read_artifact(upstream / "channel.json")["hash"]
    # nothing to validate without a windowed perturbation
    code = run(["validate", "--config", c, "--out", str(tmp_path), "--input", *ins, str(tmp_path / "melnikov.json")])
    assert code == EXIT_PRECONDITION
