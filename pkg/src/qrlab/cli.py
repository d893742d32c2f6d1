"""``qrlab`` command line: spaces, quasi-geodesic checks, surgeries, redirection search and the CK group."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

from qrlab import __version__
from qrlab import ck
from qrlab.experiment import (
    EXIT_GUARD, EXIT_SCHEMA, GENERATOR_PARAMS, ManifestError, bundled_manifests, build_space, csv_text,
    named_rays, run_experiment,
)
from qrlab.qg import QQ, min_q, path_from_dict, path_to_dict, ray_from_dict, tame, verify_qq
from qrlab.redirect import Q_CAP, compare_classes, qmin_profile, search_redirection
from qrlab.space import MetricGraph, as_fraction, fraction_str
from qrlab.surgery import (
    compose_redirections, fellow_travel_splice, pass_through, project_and_join, redirect_to_geodesic,
)

PROFILE_COLUMNS = ["r", "q_min", "nodes_expanded", "verdict"]


def _num(x) -> str:
    if isinstance(x, Fraction):
        return fraction_str(x)
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return str(x)


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=_num) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _radii(text: str) -> list[Fraction]:
    return [as_fraction(x) for x in text.split(",") if x.strip()]


def _load_space(path: str) -> MetricGraph:
    return MetricGraph.from_json(Path(path).read_text())


def _load_path(path: str, g: MetricGraph):
    return path_from_dict(json.loads(Path(path).read_text()), g)


def _load_ray(path: str, g: MetricGraph):
    return ray_from_dict(json.loads(Path(path).read_text()), g)


def _qq(args) -> QQ | None:
    if getattr(args, "q", None) is None:
        return None
    return QQ(as_fraction(args.q), as_fraction(args.Q or 0))


def _report_dict(rep) -> dict:
    return {"passed": rep.passed, "qq": [rep.qq.q, rep.qq.Q], "slack": rep.slack, "worst": rep.worst,
            "kind": getattr(rep, "kind", None), "pairs": rep.pairs, "subsampled": rep.subsampled}


# -- space ---------------------------------------------------------------------------


def cmd_space_build(args) -> int:
    params = {k: getattr(args, k) for k in GENERATOR_PARAMS[args.generator] if getattr(args, k) is not None}
    g = build_space(args.generator, params)
    Path(args.out).write_text(g.to_json())
    print(f"{args.generator}: {g.n} vertices, {len(g.edges)} edges -> {args.out}")
    return 0


def cmd_space_stats(args) -> int:
    g = _load_space(args.file)
    d = g.row(g.basepoint)
    finite = [g.unscale(int(x)) for x in d if not math.isinf(float(x)) and x < 2 ** 62]
    _emit({"vertices": g.n, "edges": len(g.edges), "basepoint": g.labels[g.basepoint], "mesh": g.mesh(),
           "radius": max(finite), "connected": g.is_connected(), "meta": g.meta})
    return 0


def cmd_space_rays(args) -> int:
    g = _load_space(args.file)
    rays = named_rays(g)
    if args.name is None:
        print("\n".join(sorted(rays)))
        return 0
    if args.name not in rays:
        print(f"unknown ray {args.name!r}; have {sorted(rays)}", file=sys.stderr)
        return 2
    _emit(path_to_dict(rays[args.name], args.file), args.out)
    return 0


# -- qg ------------------------------------------------------------------------------


def cmd_qg_verify(args) -> int:
    g = _load_space(args.space)
    path = _load_path(args.path, g)
    qq = _qq(args) or path.claimed
    if qq is None:
        print("no constants given and the path claims none", file=sys.stderr)
        return 2
    rep = verify_qq(path, qq, None if args.slack is None else as_fraction(args.slack))
    _emit(_report_dict(rep))
    return 0 if rep.passed else 1


def cmd_qg_tame(args) -> int:
    g = _load_space(args.space)
    path = _load_path(args.path, g)
    out = tame(path, _qq(args))
    _emit(path_to_dict(out, args.space), args.out)
    return 0


def cmd_qg_minq(args) -> int:
    g = _load_space(args.space)
    print(_num(min_q(_load_path(args.path, g), as_fraction(args.Q))))
    return 0


# -- surgery -------------------------------------------------------------------------


def cmd_surgery(args) -> int:
    g = _load_space(args.space)
    qq = _qq(args)
    slack = None if args.slack is None else as_fraction(args.slack)
    name = args.name
    if name == "project-and-join":
        res = project_and_join(g.vid(args.x), _load_path(args.beta, g), qq, slack)
    elif name == "redirect-to-geodesic":
        res = redirect_to_geodesic(_load_ray(args.beta, g), _load_ray(args.gamma, g), as_fraction(args.r), qq,
                                   slack=slack)
    elif name == "fellow-travel-splice":
        res = fellow_travel_splice(_load_path(args.alpha, g), _load_path(args.beta, g), as_fraction(args.t0),
                                   as_fraction(args.C), qq, slack)
    elif name == "pass-through":
        res = pass_through(_load_path(args.alpha, g), g.vid(args.x), as_fraction(args.t0), qq, slack)
    else:
        alpha, beta, gamma = (_load_ray(p, g) for p in (args.alpha, args.beta, args.gamma))
        r = as_fraction(args.r)
        first = search_redirection(alpha, beta, r, qq, None).certificate
        if first is None:
            print("no alpha -> beta certificate at these constants", file=sys.stderr)
            return 1

        def second(rr):
            return search_redirection(beta, gamma, rr, qq, None).certificate

        res = compose_redirections(first, second, qq, slack)
    cert = res.certificate
    report = {"surgery": cert.surgery, "claimed": [cert.claimed.q, cert.claimed.Q], "slack": cert.slack,
              "passed": cert.passed, "verification": _report_dict(cert.report),
              "path": path_to_dict(res.path, args.space)}
    _emit(report, args.report)
    return 0 if cert.passed else 1


# -- redirect ------------------------------------------------------------------------


def _profile_csv(rows, out: str | None) -> None:
    body = csv_text(PROFILE_COLUMNS, [{"r": _num(r.r), "q_min": _num(r.q_min), "nodes_expanded": r.nodes_expanded,
                                       "verdict": r.verdict} for r in rows])
    if out:
        Path(out).write_text(body)
    else:
        sys.stdout.write(body)


def cmd_redirect(args) -> int:
    g = _load_space(args.space)
    H = as_fraction(args.horizon) if args.horizon is not None else None
    radii = _radii(args.radii)
    Q = as_fraction(args.Q)
    if args.mode == "compare":
        rays = {}
        for p in args.ray:
            ray = _load_ray(p, g)
            rays[ray.name] = ray
        order = compare_classes(rays, radii, Q, H, as_fraction(args.q_cap))
        rows = [{"source": a, "target": b, "verdict": order.verdicts[(a, b)], "relation": order.relation(a, b)}
                for a in order.names for b in order.names if a != b]
        body = csv_text(["source", "target", "verdict", "relation"], rows)
        if args.csv:
            Path(args.csv).write_text(body)
        else:
            sys.stdout.write(body)
        return 0
    alpha, beta = _load_ray(args.alpha, g), _load_ray(args.beta, g)
    if args.mode == "qmin":
        _profile_csv(qmin_profile(alpha, beta, radii, Q, H, as_fraction(args.q_cap)), args.csv)
        return 0
    qq = QQ(as_fraction(args.q), Q)
    rows = []
    for r in radii:
        res = search_redirection(alpha, beta, r, qq, H)
        rows.append({"r": _num(r), "q_min": _num(qq.q) if res.found else "inf",
                     "nodes_expanded": res.stats["nodes_expanded"],
                     "verdict": "certified" if res.found else res.stats["reason"]})
    body = csv_text(PROFILE_COLUMNS, rows)
    if args.csv:
        Path(args.csv).write_text(body)
    else:
        sys.stdout.write(body)
    return 0 if all(row["verdict"] == "certified" for row in rows) else 1


# -- ck ------------------------------------------------------------------------------


def _lines(path: str) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]


def cmd_ck(args) -> int:
    if args.op == "nf":
        print(ck.normal_form(ck.parse_word(args.word)) or "e")
    elif args.op == "len":
        print(ck.geodesic_length(ck.parse_word(args.word)))
    elif args.op == "ball":
        g = ck.cayley_ball(args.R)
        if args.out:
            Path(args.out).write_text(g.to_json())
        print(f"ball of radius {args.R}: {g.n} vertices")
    elif args.op == "itinerary":
        rec = ck.itinerary([s if s != "-" else "" for s in _lines(args.stages)])
        _emit({"blocks": [[b.tag, b.coset] for b in rec.blocks], "walls": rec.walls,
               "excursions": rec.excursions, "entry_times": rec.entry_times})
    elif args.op == "classify":
        lengths = [as_fraction(x) for x in _lines(args.lengths)]
        cls = ck.classify_excursion(lengths, args.K)
        print(f"{cls.label} witness_rho={_num(cls.witness_rho) if cls.witness_rho is not None else '-'}")
        if args.csv:
            Path(args.csv).write_text(csv_text(["i", "log_ratio"], [
                {"i": i, "log_ratio": repr(round(v, 12))} for i, v in enumerate(cls.trace, start=1)]))
    else:
        stages = [s if s != "-" else "" for s in _lines(args.prefix)]
        T = args.r
        res = ck.spiral_to_zeta(stages, T)
        _emit({"T": T, "stage_times": res.stage_times, "letters": len(res.path),
               "min_q": ck.word_min_q(res.path, res.times, 0)})
    return 0


# -- run -----------------------------------------------------------------------------


def cmd_run(args) -> int:
    if args.list:
        print("\n".join(bundled_manifests()))
        return 0
    outcome = run_experiment(args.manifest, args.out, args.threads)
    if outcome.code in (EXIT_SCHEMA, EXIT_GUARD):
        print(json.dumps(outcome.summary, sort_keys=True), file=sys.stderr)
        return outcome.code
    for inv in outcome.summary["invariants"]:
        print(f"{'PASS' if inv['passed'] else 'FAIL'} {inv['invariant']}")
    print(f"wrote {outcome.out_dir}")
    return outcome.code


# -- parser --------------------------------------------------------------------------


def _constants(p, q_required=False) -> None:
    p.add_argument("--q", required=q_required)
    p.add_argument("--Q", default="0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qrlab {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for independent probes")
    sub = parser.add_subparsers(dest="command", required=True)

    space = sub.add_parser("space", help="build and inspect spaces").add_subparsers(dest="op", required=True)
    b = space.add_parser("build")
    b.add_argument("generator", choices=sorted(GENERATOR_PARAMS))
    for flag, dest in [("--k", "k"), ("--R", "R"), ("--thetamin", "theta_min"), ("--thetamax", "theta_max"),
                       ("--rhomax", "rho_max"), ("--h", "h")]:
        b.add_argument(flag, dest=dest)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_space_build)
    s = space.add_parser("stats")
    s.add_argument("file")
    s.set_defaults(func=cmd_space_stats)
    s = space.add_parser("rays", help="list the named rays of a space, or export one")
    s.add_argument("file")
    s.add_argument("name", nargs="?")
    s.add_argument("--out")
    s.set_defaults(func=cmd_space_rays)

    qg = sub.add_parser("qg", help="quasi-geodesic checks").add_subparsers(dest="op", required=True)
    for name, func in [("verify", cmd_qg_verify), ("tame", cmd_qg_tame), ("minq", cmd_qg_minq)]:
        p = qg.add_parser(name)
        p.add_argument("--space", required=True)
        p.add_argument("--path", required=True)
        if name != "minq":
            _constants(p)
        else:
            p.add_argument("--Q", default="0")
        if name == "verify":
            p.add_argument("--slack")
        if name == "tame":
            p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("surgery", help="run one surgery and re-verify it")
    p.add_argument("name", choices=["project-and-join", "redirect-to-geodesic", "fellow-travel-splice",
                                    "pass-through", "compose"])
    p.add_argument("--space", required=True)
    for flag in ("--alpha", "--beta", "--gamma", "--x", "--t0", "--r", "--C", "--slack"):
        p.add_argument(flag)
    _constants(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_surgery)

    p = sub.add_parser("redirect", help="redirection search and profiles")
    p.add_argument("mode", choices=["search", "qmin", "compare"])
    p.add_argument("--space", required=True)
    p.add_argument("--alpha")
    p.add_argument("--beta")
    p.add_argument("--ray", action="append", default=[], help="ray file for compare (repeatable)")
    p.add_argument("--radii", default="4,8,16")
    p.add_argument("--q", default="9")
    p.add_argument("--Q", default="0")
    p.add_argument("--q-cap", dest="q_cap", default=str(Q_CAP))
    p.add_argument("--horizon")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_redirect)

    c = sub.add_parser("ck", help="the Croke-Kleiner group").add_subparsers(dest="op", required=True)
    for name in ("nf", "len"):
        p = c.add_parser(name)
        p.add_argument("word")
    p = c.add_parser("ball")
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--out")
    p = c.add_parser("itinerary")
    p.add_argument("--stages", required=True, help="one syllable per line, '-' for empty")
    p = c.add_parser("classify")
    p.add_argument("--lengths", required=True, help="one excursion length per line")
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--csv")
    p = c.add_parser("spiral")
    p.add_argument("--prefix", required=True, help="stages v1, w1, ... one per line, '-' for empty")
    p.add_argument("--r", type=int, default=8)
    for p in c.choices.values():
        p.set_defaults(func=cmd_ck)

    p = sub.add_parser("run", help="run an experiment manifest")
    p.add_argument("manifest", nargs="?", default="")
    p.add_argument("--out")
    p.add_argument("--list", action="store_true", help="list bundled manifests")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as exc:
        print(json.dumps({"error": "schema_violation", "detail": str(exc)}), file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, KeyError, OSError) as exc:
        print(f"qrlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
