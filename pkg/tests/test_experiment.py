import json

import pytest

from qrlab.experiment import (
    EXIT_GUARD, EXIT_INVARIANT, EXIT_OK, EXIT_SCHEMA, ManifestError, bundled_manifests, check_invariants,
    load_manifest, parse_invariant, run_experiment, stabilization_radius,
)
from qrlab.redirect import ProfileRow


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_bundled_manifests_listed():
    assert bundled_manifests() == ["ck-classify", "hairy-spiral", "product-point", "xk-asymmetry"]
    for name in bundled_manifests():
        assert load_manifest(name)["name"] == name


def test_empty_probe_list(tmp_path):
    m = _write(tmp_path, "m.json", {"name": "empty", "experiment": "redirect-profile", "generator": "xk",
                                    "k": 2, "R": 10, "pairs": [], "radii": [4]})
    out = run_experiment(m, tmp_path / "out")
    assert out.code == EXIT_OK
    assert (tmp_path / "out" / "probes.csv").read_text() == "pair,r,q_min,nodes_expanded,verdict,provenance\n"


def test_include_and_override(tmp_path):
    _write(tmp_path, "base.json", {"experiment": "redirect-profile", "generator": "xk", "k": 3, "R": 40,
                                   "radii": [4, 8], "Q": 2, "seed": 1})
    m = _write(tmp_path, "m.json", {"include": ["base.json"], "name": "inc", "R": 50,
                                    "pairs": ["beta>alpha0"], "invariants": ["beta>alpha0:strictly_increasing"]})
    merged = load_manifest(m)
    assert merged["R"] == 50 and merged["k"] == 3 and "include" not in merged
    out = run_experiment(m, tmp_path / "o")
    assert out.code == EXIT_OK and out.summary["seed"] == 1
    assert out.summary["numbers"]["Q"]["provenance"] == "derived-oracle"


@pytest.mark.parametrize("data", [
    {"experiment": "redirect-profile"},
    {"name": "x", "experiment": "nope"},
    {"name": "x", "experiment": "redirect-profile", "generator": "xk", "k": 2},
    {"name": "x", "experiment": "redirect-profile", "generator": "xk", "k": 2, "R": 5, "bogus": 1},
    {"name": "x", "experiment": "ck-classify", "invariants": ["a:not_a_check"]},
    {"name": "x", "experiment": "redirect-profile", "generator": "xk", "k": 2, "R": 5, "pairs": ["ab"]},
])
def test_schema_violations(tmp_path, data):
    m = _write(tmp_path, "bad.json", data)
    with pytest.raises(ManifestError):
        load_manifest(m)
    assert run_experiment(m, tmp_path / "o").code == EXIT_SCHEMA


def test_include_cycle(tmp_path):
    _write(tmp_path, "a.json", {"include": ["b.json"], "name": "a", "experiment": "ck-classify"})
    _write(tmp_path, "b.json", {"include": ["a.json"]})
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "a.json")


def test_unknown_ray_is_schema_error(tmp_path):
    m = _write(tmp_path, "m.json", {"name": "x", "experiment": "redirect-profile", "generator": "xk", "k": 2,
                                    "R": 10, "pairs": ["alpha0>gamma"], "radii": [4]})
    assert run_experiment(m, tmp_path / "o").code == EXIT_SCHEMA


def test_failed_invariant_exit_code(tmp_path):
    m = _write(tmp_path, "m.json", {"name": "x", "experiment": "ck-classify", "families": ["constant:1"],
                                    "invariants": ["constant:1:label:exponential-at-scale"]})
    out = run_experiment(m, tmp_path / "o")
    assert out.code == EXIT_INVARIANT and not out.summary["passed"]


def test_resource_guard(tmp_path, monkeypatch):
    monkeypatch.setattr("qrlab.redirect._mem_cap_states", lambda: 3)
    m = _write(tmp_path, "m.json", {"name": "x", "experiment": "redirect-profile", "generator": "xk", "k": 3,
                                    "R": 40, "pairs": ["alpha0>beta"], "radii": [8], "Q": 2})
    out = run_experiment(m, tmp_path / "o")
    assert out.code == EXIT_GUARD and out.summary["error"] == "resource_guard"


def test_invariant_parsing_and_wildcard():
    assert parse_invariant("exponential:3/2:label:exponential-at-scale") == (
        "exponential:3/2", "label", "exponential-at-scale")
    assert parse_invariant("a>b:max_at_most:9") == ("a>b", "max_at_most", "9")
    assert parse_invariant("nothing") is None
    series = {"p": [1, 2, 3], "q": [2, 2, 2]}
    res = check_invariants(["*:max_at_most:3", "*:strictly_increasing", "z:all_pass"], series, ["p", "q"])
    assert [r["passed"] for r in res] == [True, False, False]


def test_stabilization_radius():
    rows = [ProfileRow(r, q, 0, "certified") for r, q in [(2, 1), (4, 2), (8, 6), (16, 2)]]
    assert stabilization_radius(rows, 5) == 4


def test_xk_asymmetry_bundle(tmp_path):
    out = run_experiment("xk-asymmetry", tmp_path / "xk")
    assert out.code == EXIT_OK
    lines = (tmp_path / "xk" / "probes.csv").read_text().splitlines()
    back = [ln.split(",") for ln in lines[1:] if ln.startswith("beta>alpha0")]
    q = [eval_fraction(row[2]) for row in back]
    assert q == sorted(q) and len(set(q)) == len(q)
    summary = json.loads((tmp_path / "xk" / "summary.json").read_text())
    assert all(len(c["sha256"]) == 64 for c in summary["certificates"])
    assert all(set(v) == {"value", "provenance"} for v in summary["numbers"].values())


def eval_fraction(text):
    from fractions import Fraction

    return Fraction(text)


def test_threads_do_not_change_output(tmp_path):
    a = run_experiment("product-point", tmp_path / "a", threads=1)
    b = run_experiment("product-point", tmp_path / "b", threads=2)
    assert a.code == b.code == EXIT_OK
    for f in ("probes.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
