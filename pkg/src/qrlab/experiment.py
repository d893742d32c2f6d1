"""Manifest-driven experiment runner producing deterministic report bundles.

A manifest is a flat JSON object.  Keys:

``name``, ``experiment``
    Bundle name and one of ``redirect-profile``, ``hairy-spiral``, ``ck-classify``.
``include``
    Optional list of manifest paths (relative to the including file) merged
    first; keys in the including file win.
``seed``
    Integer fixing every random choice (hair sampling).
``generator`` and generator parameters, or ``space``
    ``xk`` (``k``, ``R``), ``product`` (``R``), ``hairylot`` (``theta_min``,
    ``theta_max``, ``rho_max``, ``h``) or ``example2`` (``R``).  ``space``
    names a JSON space file to load instead.
``pairs``, ``radii``, ``Q``, ``q_cap``, ``horizon``
    Probe schedule for ``redirect-profile``.  Pairs are ``"source>target"``.
``directions``
    Product ray directions ``[[dx, dy], ...]`` named ``dir(dx,dy)``.
``spirals``, ``hairs``, ``hair_count``, ``hair_window``
    Probe schedule for ``hairy-spiral``.
``families``, ``K``, ``chase_rho``, ``chase_radii``
    Probe schedule for ``ck-classify``.  Families are ``constant:C``,
    ``exponential:b`` or ``enlargement:C``.
``invariants``
    List of ``"selector:check[:arg]"`` strings, see :data:`CHECKS`.
``out``
    Default output directory.

Every bundle holds ``probes.csv`` and ``summary.json``.  Every number in the
summary is tagged with its provenance.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from qrlab import __version__
from qrlab.ck import chase_spiral, classify_excursion, enlargement_family, sublinear_excursion_check
from qrlab.qg import QQ, path_to_dict, verify_qq
from qrlab.redirect import Q_CAP, qmin_profile
from qrlab.space import MetricGraph, as_fraction, fraction_str
from qrlab.spaces import (
    build_example2, build_hairy_lot, build_product, build_ray, build_xk, example2_rays, hair_ray, hairy_rays,
    log_spiral, product_ray, xk_rays,
)

MEASURED = "measured"
PAPER = "paper-constant"
ORACLE = "derived-oracle"

EXIT_OK, EXIT_INVARIANT, EXIT_SCHEMA, EXIT_GUARD = 0, 1, 2, 3

EXPERIMENTS = ("redirect-profile", "hairy-spiral", "ck-classify")
GENERATOR_PARAMS = {
    "xk": ("k", "R"),
    "product": ("R",),
    "hairylot": ("theta_min", "theta_max", "rho_max", "h"),
    "example2": ("R",),
}
COMMON_KEYS = {"name", "experiment", "include", "seed", "invariants", "out", "generator", "space"}
EXPERIMENT_KEYS = {
    "redirect-profile": {"pairs", "radii", "Q", "q_cap", "horizon", "directions"},
    "hairy-spiral": {"spirals", "hairs", "hair_count", "hair_window", "radii", "Q", "q_cap", "bound"},
    "ck-classify": {"families", "K", "chase_rho", "chase_radii"},
}
CSV_COLUMNS = {
    "redirect-profile": ["pair", "r", "q_min", "nodes_expanded", "verdict", "provenance"],
    "hairy-spiral": ["probe", "r", "q_min", "nodes_expanded", "verdict", "provenance"],
    "ck-classify": ["family", "label", "witness_rho", "statistic", "chase", "sublinear", "provenance"],
}


class ManifestError(ValueError):
    """Schema violation in a manifest."""


class ResourceGuardTrip(RuntimeError):
    """A probe hit the memory cap."""


def _read_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"manifest {path} is not a JSON object")
    return data


def bundled_manifests() -> list[str]:
    root = resources.files("qrlab") / "manifests"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_manifest(name: str) -> Path:
    """A path to an existing file, or the name of a bundled manifest."""
    p = Path(name)
    if p.is_file():
        return p
    bundled = resources.files("qrlab") / "manifests" / f"{name}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise ManifestError(f"no manifest file or bundled manifest named {name!r}")


def load_manifest(path: str | Path, _seen: tuple = ()) -> dict:
    path = resolve_manifest(str(path))
    key = path.resolve()
    if key in _seen:
        raise ManifestError(f"include cycle through {path}")
    data = _read_json(path)
    merged: dict = {}
    includes = data.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    for inc in includes:
        target = path.parent / inc
        merged.update(load_manifest(target if target.is_file() else inc, _seen + (key,)))
    merged.update(data)
    if not _seen:
        validate(merged)
        if "space" in merged and not Path(merged["space"]).is_absolute():
            merged["space"] = str(path.parent / merged["space"])
    return merged


def validate(m: dict) -> None:
    for k in ("name", "experiment"):
        if k not in m:
            raise ManifestError(f"missing key {k!r}")
    exp = m["experiment"]
    if exp not in EXPERIMENTS:
        raise ManifestError(f"unknown experiment {exp!r}")
    unknown = set(m) - COMMON_KEYS - EXPERIMENT_KEYS[exp]
    if exp != "ck-classify":
        gen = m.get("generator")
        if gen is None and "space" not in m:
            raise ManifestError("need a generator or a space file")
        if gen is not None:
            if gen not in GENERATOR_PARAMS:
                raise ManifestError(f"unknown generator {gen!r}")
            missing = [p for p in GENERATOR_PARAMS[gen] if p not in m and p != "h"]
            if missing:
                raise ManifestError(f"generator {gen} needs {missing}")
            unknown -= set(GENERATOR_PARAMS[gen])
    if unknown:
        raise ManifestError(f"unknown keys {sorted(unknown)}")
    if not isinstance(m.get("seed", 0), int):
        raise ManifestError("seed must be an integer")
    for inv in m.get("invariants", []):
        if parse_invariant(str(inv)) is None:
            raise ManifestError(f"bad invariant {inv!r}")
    for pair in m.get("pairs", []):
        if str(pair).count(">") != 1:
            raise ManifestError(f"bad pair {pair!r}")


# -- spaces and rays -----------------------------------------------------------------


def build_space(generator: str, params: dict) -> MetricGraph:
    p = dict(params)
    if generator == "xk":
        return build_xk(int(p["k"]), int(p["R"]))
    if generator == "product":
        return build_product(build_ray(int(p["R"])), build_ray(int(p["R"])), int(p["R"]))
    if generator == "hairylot":
        h = as_fraction(p.get("h", "1/4"))
        return build_hairy_lot(as_fraction(p["theta_min"]), as_fraction(p["theta_max"]),
                               as_fraction(p["rho_max"]), h)
    if generator == "example2":
        return build_example2(int(p["R"]))
    raise ManifestError(f"unknown generator {generator!r}")


def named_rays(g: MetricGraph, directions=()) -> dict:
    gen = g.meta.get("generator")
    if gen == "xk":
        return xk_rays(g)
    if gen == "hairylot":
        return hairy_rays(g)
    if gen == "example2":
        return example2_rays(g)
    if gen == "product":
        rays = {}
        for dx, dy in directions or [(1, 0), (0, 1), (1, 1)]:
            ray = product_ray(g, int(dx), int(dy))
            rays[ray.name] = ray
        return rays
    return {}


def _space(m: dict) -> MetricGraph:
    if "space" in m:
        return MetricGraph.from_json(Path(m["space"]).read_text())
    return build_space(m["generator"], {k: m[k] for k in GENERATOR_PARAMS[m["generator"]] if k in m})


# -- probes --------------------------------------------------------------------------


@dataclass
class Bundle:
    rows: list[dict] = field(default_factory=list)
    series: dict[str, list] = field(default_factory=dict)
    certificates: list[dict] = field(default_factory=list)
    numbers: dict[str, dict] = field(default_factory=dict)
    profiles: list[str] = field(default_factory=list)


def _num(x) -> str:
    if isinstance(x, Fraction):
        return fraction_str(x)
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(round(x, 12))
    return str(x)


def _tag(value, provenance: str) -> dict:
    return {"value": _num(value), "provenance": provenance}


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _profile_rows(label: str, rows, bundle: Bundle, key: str = "pair") -> None:
    for row in rows:
        bundle.rows.append({key: label, "r": _num(row.r), "q_min": _num(row.q_min),
                            "nodes_expanded": str(row.nodes_expanded), "verdict": row.verdict,
                            "provenance": MEASURED})
        if row.certificate is not None:
            bundle.certificates.append({"probe": f"{label}@{_num(row.r)}",
                                        "sha256": _sha(row.certificate.digest_fields())})
    bundle.series[label] = [row.q_min for row in rows]
    bundle.profiles.append(label)


def _map(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_rows(label: str, rows) -> None:
    for row in rows:
        if row.verdict == "memory_cap":
            raise ResourceGuardTrip(f"probe {label} at r = {_num(row.r)} hit QRLAB_MEM_CAP_MB")


def run_redirect_profile(m: dict, threads: int) -> Bundle:
    g = _space(m)
    rays = named_rays(g, m.get("directions", ()))
    radii = [as_fraction(r) for r in m.get("radii", [])]
    Q = as_fraction(m.get("Q", 0))
    q_cap = as_fraction(m.get("q_cap", Q_CAP))
    H = as_fraction(m["horizon"]) if "horizon" in m else None
    pairs = m.get("pairs")
    if pairs is None:
        pairs = [f"{a}>{b}" for a in rays for b in rays if a != b]
    for pair in pairs:
        for name in pair.split(">"):
            if name not in rays:
                raise ManifestError(f"unknown ray {name!r}; have {sorted(rays)}")

    def probe(pair):
        a, b = pair.split(">")
        return qmin_profile(rays[a], rays[b], radii, Q, H, q_cap) if radii else []

    bundle = Bundle()
    for pair, rows in zip(pairs, _map(probe, pairs, threads)):
        _check_rows(pair, rows)
        _profile_rows(pair, rows, bundle)
    bundle.numbers.update({"Q": _tag(Q, MEASURED if "Q" not in m else ORACLE), "q_cap": _tag(q_cap, ORACLE),
                           "vertices": _tag(g.n, MEASURED)})
    return bundle


def _sample_hairs(g: MetricGraph, m: dict) -> list[tuple[int, int]]:
    if "hairs" in m:
        return [(int(r), int(t)) for r, t in m["hairs"]]
    count = int(m.get("hair_count", 0))
    lo, hi = m.get("hair_window", [0, 10 ** 9])
    cands = sorted({(int(c[0]), int(c[1])) for lab, c in zip(g.labels, g.coords)
                    if lab.startswith("h:") and c[2] == 1 and lo <= c[0] + abs(c[1]) <= hi})
    rng = random.Random(int(m.get("seed", 0)))
    return sorted(rng.sample(cands, min(count, len(cands))), key=lambda c: (c[0] + abs(c[1]), c))


def stabilization_radius(rows, bound) -> Fraction:
    """Largest probe radius up to which every profile value is at most ``bound``."""
    best = Fraction(0)
    for row in rows:
        if row.q_min > bound:
            break
        best = row.r
    return best


def run_hairy_spiral(m: dict, threads: int) -> Bundle:
    g = _space(m)
    h = g.mesh()
    bundle = Bundle()
    claimed = QQ(4, 1)
    for T in m.get("spirals", []):
        path = log_spiral(g, int(T))
        rep = verify_qq(path, claimed, 2 * h)
        label = f"spiral(T={T})"
        bundle.rows.append({"probe": label, "r": "", "q_min": "", "nodes_expanded": "0",
                            "verdict": "pass" if rep.passed else "fail", "provenance": MEASURED})
        bundle.series[label] = [rep.passed]
        bundle.certificates.append({"probe": label, "sha256": _sha({"path": path_to_dict(path),
                                                                     "passed": rep.passed})})
    bundle.series["spirals"] = [v[0] for k, v in bundle.series.items() if k.startswith("spiral(")]
    hairs = _sample_hairs(g, m)
    radii = [as_fraction(r) for r in m.get("radii", [2, 4, 8, 16])]
    Q = as_fraction(m.get("Q", 1))
    q_cap = as_fraction(m.get("q_cap", 8))
    bound = as_fraction(m.get("bound", 5))
    zeta = hairy_rays(g)["zeta"]

    def probe(c):
        return qmin_profile(hair_ray(g, *c), zeta, radii, Q, None, q_cap)

    stab = []
    for c, rows in zip(hairs, _map(probe, hairs, threads)):
        label = f"hair({c[0]},{c[1]})"
        _check_rows(label, rows)
        _profile_rows(label, rows, bundle, key="probe")
        s = stabilization_radius(rows, bound)
        stab.append(s)
        bundle.numbers[f"stabilization[{label}]"] = _tag(s, MEASURED)
    bundle.series["stabilization"] = stab
    bundle.series["hairs_below_stabilization"] = [
        row_q for c, s in zip(hairs, stab) for row_q, r in zip(bundle.series[f"hair({c[0]},{c[1]})"], radii)
        if r <= s]
    bundle.numbers.update({"claimed_q": _tag(claimed.q, PAPER), "claimed_Q": _tag(claimed.Q, PAPER),
                           "slack": _tag(2 * h, ORACLE), "bound": _tag(bound, PAPER),
                           "vertices": _tag(g.n, MEASURED)})
    return bundle


def excursion_family(spec: str, K: int) -> list:
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return [as_fraction(arg or 1)] * K
    if kind == "exponential":
        b = as_fraction(arg or "3/2")
        return [b ** i for i in range(1, K + 1)]
    if kind == "enlargement":
        return enlargement_family(as_fraction(arg or 1), K).lengths
    raise ManifestError(f"unknown excursion family {spec!r}")


def run_ck_classify(m: dict, threads: int) -> Bundle:
    K = int(m.get("K", 64))
    rho = as_fraction(m.get("chase_rho", "1/4"))
    chase_radii = [as_fraction(r) for r in m.get("chase_radii", [4, 8, 16])]
    bundle = Bundle()
    for spec in m.get("families", []):
        lengths = excursion_family(spec, K)
        cls = classify_excursion(lengths, K)
        chases = [chase_spiral(lengths, rho, r) for r in chase_radii]
        chase = "catches" if all(c.verdict == "catches" for c in chases) else (
            "never_catches" if all(c.verdict == "never_catches" for c in chases) else "mixed")
        sub = sublinear_excursion_check(lengths, K)
        bundle.rows.append({"family": spec, "label": cls.label,
                            "witness_rho": _num(cls.witness_rho) if cls.witness_rho is not None else "",
                            "statistic": _num(cls.statistic), "chase": chase,
                            "sublinear": str(sub.sublinear).lower(), "provenance": MEASURED})
        bundle.series[spec] = {"label": cls.label, "chase": chase, "sublinear": sub.sublinear,
                               "tail_max": sub.tail_max}
        bundle.certificates.append({"probe": spec, "sha256": _sha([_num(x) for x in cls.trace])})
        bundle.numbers[f"statistic[{spec}]"] = _tag(cls.statistic, MEASURED)
        bundle.numbers[f"tail_max[{spec}]"] = _tag(sub.tail_max, MEASURED)
    bundle.numbers.update({"K": _tag(K, ORACLE), "chase_rho": _tag(rho, ORACLE)})
    return bundle


RUNNERS = {
    "redirect-profile": run_redirect_profile,
    "hairy-spiral": run_hairy_spiral,
    "ck-classify": run_ck_classify,
}


# -- invariants ----------------------------------------------------------------------


CHECKS: dict[str, Callable[[Any, str], bool]] = {
    "strictly_increasing": lambda s, a: all(x < y for x, y in zip(s, s[1:])),
    "nondecreasing": lambda s, a: all(x <= y for x, y in zip(s, s[1:])),
    "max_at_most": lambda s, a: all(v <= as_fraction(a) for v in s),
    "final_above": lambda s, a: bool(s) and s[-1] > as_fraction(a),
    "all_certified": lambda s, a: all(not math.isinf(v) for v in s),
    "all_pass": lambda s, a: all(s),
    "label": lambda s, a: s["label"] == a,
    "chase": lambda s, a: s["chase"] == a,
    "sublinear": lambda s, a: s["sublinear"] == (a == "true"),
}


def parse_invariant(inv: str) -> tuple[str, str, str] | None:
    """Split ``selector:check[:arg]``; selectors may themselves contain colons."""
    parts = inv.split(":")
    for i in range(len(parts) - 1, 0, -1):
        if parts[i] in CHECKS:
            return ":".join(parts[:i]), parts[i], ":".join(parts[i + 1:])
    return None


def check_invariants(invariants: list[str], series: dict, profiles: list[str] = ()) -> list[dict]:
    """``*`` selects every profile series in turn."""
    out = []
    for inv in invariants:
        selector, check, arg = parse_invariant(inv)
        targets = list(profiles) if selector == "*" else [selector]
        if not targets or any(t not in series for t in targets):
            out.append({"invariant": inv, "passed": False, "reason": "no such probe"})
            continue
        try:
            ok = all(bool(CHECKS[check](series[t], arg)) for t in targets)
        except (TypeError, KeyError, ValueError, ZeroDivisionError) as exc:
            out.append({"invariant": inv, "passed": False, "reason": str(exc)})
            continue
        out.append({"invariant": inv, "passed": ok})
    return out


# -- bundle writing ------------------------------------------------------------------


def csv_text(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


@dataclass(frozen=True)
class RunOutcome:
    code: int
    summary: dict
    out_dir: Path | None


def run_experiment(manifest: str | Path | dict, out: str | Path | None = None, threads: int = 1) -> RunOutcome:
    """Run one manifest and write ``probes.csv`` and ``summary.json`` under ``out``."""
    try:
        m = manifest if isinstance(manifest, dict) else load_manifest(manifest)
        if isinstance(manifest, dict):
            validate(m)
        out_dir = Path(out or m.get("out") or f"runs/{m['name']}")
        bundle = RUNNERS[m["experiment"]](m, threads)
    except ManifestError as exc:
        return RunOutcome(EXIT_SCHEMA, {"error": "schema_violation", "detail": str(exc)}, None)
    except ResourceGuardTrip as exc:
        return RunOutcome(EXIT_GUARD, {"error": "resource_guard", "detail": str(exc)}, None)
    except MemoryError:
        return RunOutcome(EXIT_GUARD, {"error": "resource_guard", "detail": "out of memory"}, None)
    results = check_invariants(list(m.get("invariants", [])), bundle.series, bundle.profiles)
    passed = all(r["passed"] for r in results)
    summary = {
        "name": m["name"], "experiment": m["experiment"], "version": __version__,
        "seed": int(m.get("seed", 0)), "manifest_sha256": _sha(m),
        "invariants": results, "passed": passed, "certificates": bundle.certificates,
        "numbers": bundle.numbers, "probes": len(bundle.rows),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "probes.csv").write_text(csv_text(CSV_COLUMNS[m["experiment"]], bundle.rows))
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return RunOutcome(EXIT_OK if passed else EXIT_INVARIANT, summary, out_dir)
