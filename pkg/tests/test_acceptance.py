"""Acceptance criteria, one test each; every test prints a PASS/FAIL line with its measurements."""

import random
import time
from fractions import Fraction

import pytest

from conftest import acceptance_line
from instances import (
    Warp, dist, far_ray, join_redirection, point_near, random_geodesic, random_qq_path, random_walk_path,
    suite_spaces,
)
from oracles import cancel_reduce
from qrlab import ck
from qrlab.experiment import bundled_manifests, excursion_family, run_experiment, stabilization_radius
from qrlab.qg import QQ, QGPath, RaySpec, pointwise_distance, tame, verify_qq
from qrlab.redirect import compose_certificates, qmin_profile, search_factory, search_redirection
from qrlab.space import norm
from qrlab.spaces import (
    build_hairy_lot, build_product, build_ray, build_xk, hair_ray, hairy_rays, log_spiral, polar_vertex, product_ray,
    xk_rays,
)
from qrlab.surgery import (
    SurgeryError, compose_redirections, fellow_travel_splice, pass_through, project_and_join, redirect_to_geodesic,
)

PER_SURGERY = 200
MAX_ATTEMPTS = 2000


@pytest.fixture(scope="module")
def spaces():
    return suite_spaces()


# -- instance makers: return (result, expected constants) or raise SurgeryError -----------------


def _input_path(g, rng):
    return random_walk_path(g, rng) if rng.random() < 0.5 else random_qq_path(g, rng)


def _project_and_join(g, rng):
    beta = _input_path(g, rng)
    res = project_and_join(rng.randrange(g.n), beta)
    return res, QQ(3 * beta.claimed.q, beta.claimed.Q)


def _redirect_to_geodesic(g, rng):
    beta = far_ray(g, rng, "beta")
    r = rng.choice([t for t in beta.path.times if t >= 1])
    w = point_near(g, rng, beta.path.at(r), r / 2, r / 2)
    gamma = RaySpec("gamma", random_qq_path(g, rng, w))
    res = redirect_to_geodesic(beta, gamma, r)
    qq = gamma.path.claimed
    return res, QQ(9 * qq.q, qq.Q)


def _fellow_travel(g, rng):
    alpha0, beta0 = random_geodesic(g, rng), random_geodesic(g, rng)
    warp = Warp(rng, max(alpha0.end, beta0.end))
    alpha, beta = warp.apply(alpha0), warp.apply(beta0)
    common = sorted(set(alpha.times) & set(beta.times))
    t0 = rng.choice(common)
    C = max(dist(g, v, alpha.at(t)) for t, v in zip(beta.times, beta.vertices) if t <= t0)
    res = fellow_travel_splice(alpha, beta, t0, C)
    return res, QQ(warp.qq.q, warp.qq.Q + C)


def _pass_through(g, rng):
    alpha = _input_path(g, rng)
    t0 = rng.choice(alpha.times)
    a0 = alpha.at(t0)
    x = rng.choice([a0] + [u for u, w in g.neighbors(a0) if w <= 1])
    res = pass_through(alpha, x, t0)
    return res, QQ(alpha.claimed.q, alpha.claimed.Q + 3)


def _composition(g, rng):
    pool = [far_ray(g, rng, f"ray{i}") for i in range(3)]
    a, b, c = (rng.choice(pool) for _ in range(3))
    cert1 = join_redirection(a, b, Fraction(rng.choice([1, 2])))
    if cert1 is None:
        raise SurgeryError("first leg does not fit")
    for q2 in (1, Fraction(3, 2), 2):
        qq2 = QQ(q2, 1)
        try:
            out = compose_redirections(cert1, lambda rr, qq2=qq2: join_redirection(b, c, rr, qq2), qq2)
        except SurgeryError:
            continue
        return out, QQ(max(qq2.q + 1, cert1.qq.q), max(cert1.qq.Q, qq2.Q))
    raise SurgeryError("no admissible gluing time inside the horizon")


SURGERIES = {
    "nearest-point join": _project_and_join,
    "ray-to-geodesic": _redirect_to_geodesic,
    "fellow-travel splice": _fellow_travel,
    "pass-through": _pass_through,
    "composition": _composition,
}


def test_criterion_1_surgery_constants(spaces):
    start = time.time()
    rng = random.Random(1)
    names = list(spaces)
    summary, failures = [], []
    for surgery, make in SURGERIES.items():
        done, gated, per_space = 0, 0, dict.fromkeys(names, 0)
        for attempt in range(MAX_ATTEMPTS):
            if done >= PER_SURGERY:
                break
            name = names[attempt % len(names)]
            g = spaces[name]
            try:
                res, expected = make(g, rng)
            except SurgeryError:
                gated += 1
                continue
            cert = res.certificate
            ok = cert.claimed == expected and verify_qq(res.path, expected, 2 * res.path.h).passed
            if not ok:
                failures.append((surgery, name, str(cert.claimed), str(expected), cert.report.worst))
            done += 1
            per_space[name] += 1
        covered = all(per_space.values())
        summary.append((surgery, done, gated, covered))
        if done < PER_SURGERY or not covered:
            failures.append((surgery, "coverage", done, per_space))
    elapsed = time.time() - start
    passed = not failures and elapsed < 120
    detail = "; ".join(f"{s} {n} verified/{k} gated" for s, n, k, _ in summary)
    acceptance_line(1, "surgery constants", passed, f"{detail}; failures {len(failures)}; {elapsed:.1f}s")
    assert not failures, failures[:5]
    assert elapsed < 120


def test_criterion_2_taming(spaces):
    start = time.time()
    rng = random.Random(2)
    names = list(spaces)
    bad, worst_ratio = [], Fraction(0)
    for i in range(120):
        g = spaces[names[i % len(names)]]
        make = random_walk_path if i % 2 else random_qq_path
        p = make(g, rng)
        while p.end < 1:
            p = make(g, rng)
        qq = p.claimed
        assert verify_qq(p, qq, 0).passed, "generator produced a path outside its constants"
        out = tame(p, qq)
        expected = QQ(qq.q + qq.Q, qq.q + 1 / qq.q + 2 * qq.Q)
        rep = verify_qq(out, expected, 2 * p.h)
        gap = pointwise_distance(out, p)
        worst_ratio = max(worst_ratio, gap / (2 * (qq.q + qq.Q)))
        if out.claimed != expected or not rep.passed or gap > 2 * (qq.q + qq.Q):
            bad.append((i, str(qq), rep.worst, gap))
    elapsed = time.time() - start
    passed = not bad and elapsed < 30
    acceptance_line(2, "taming", passed, f"120 instances, {len(bad)} failures, max distance/bound "
                                         f"{float(worst_ratio):.3f}; {elapsed:.1f}s")
    assert not bad, bad[:5]
    assert elapsed < 30


def test_criterion_3_xk_asymmetry():
    start = time.time()
    g = build_xk(3, 400)
    rays = xk_rays(g)
    radii = [4, 8, 16, 32]
    forward = qmin_profile(rays["alpha0"], rays["beta"], radii, 2, None, 64)
    backward = qmin_profile(rays["beta"], rays["alpha0"], radii, 2, None, 64)
    fq = [row.q_min for row in forward]
    bq = [row.q_min for row in backward]
    limit = 9 + 2 * g.mesh()
    ok_forward = all(row.verdict == "certified" and row.q_min <= limit for row in forward)
    ok_backward = all(a < b for a, b in zip(bq, bq[1:])) and bq[-1] > 6
    elapsed = time.time() - start
    passed = ok_forward and ok_backward and elapsed < 300
    acceptance_line(3, "X_k asymmetry", passed, f"alpha0->beta q_min {[str(q) for q in fq]} (limit {limit}); "
                                                f"beta->alpha0 q_min {[str(q) for q in bq]}; {elapsed:.1f}s")
    assert ok_forward and ok_backward
    assert elapsed < 300


def test_criterion_4_product_mono_directional():
    start = time.time()
    g = build_product(build_ray(64), build_ray(64), 64)
    rays = [product_ray(g, *d) for d in [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (3, 1)]]
    qq = QQ(8, 8)
    missing, found = [], 0
    for a in rays:
        for b in rays:
            if a is b:
                continue
            for r in (4, 8, 16):
                cert = search_redirection(a, b, r, qq).certificate
                if cert is None or not cert.qq <= qq:
                    missing.append((a.name, b.name, r))
                else:
                    found += 1
    elapsed = time.time() - start
    passed = not missing and elapsed < 180
    acceptance_line(4, "product mono-directionality", passed,
                    f"{found}/90 ordered pairs x radii certified at (8,8); missing {missing[:3]}; {elapsed:.1f}s")
    assert not missing
    assert elapsed < 180


def test_criterion_5_hairy_lot():
    start = time.time()
    lot = build_hairy_lot(-1, 5, 60, Fraction(1, 4))
    spirals = {T: verify_qq(log_spiral(lot, T), QQ(4, 1), 2 * lot.mesh()).passed for T in (2, 3, 4)}
    del lot
    g = build_hairy_lot(-1, 3, 64, Fraction(1, 2))
    zeta = hairy_rays(g)["zeta"]
    t_min, t_max = Fraction(g.meta["theta_min"]), Fraction(g.meta["theta_max"])
    cands = sorted({(int(c[0]), int(c[1])) for lab, c in zip(g.labels, g.coords)
                    if lab.startswith("h:") and c[2] == 1 and t_min < c[1] < t_max and 8 <= c[0] + c[1] <= 48})
    hairs = sorted(random.Random(5).sample(cands, 6), key=lambda c: (c[0] + c[1], c))
    radii = [2, 4, 8, 16, 32]
    bound = 4 + 1
    worst, stab = Fraction(0), []
    for rho, theta in hairs:
        rows = qmin_profile(hair_ray(g, rho, theta), zeta, radii, 1, None, 8)
        base = norm(g, polar_vertex(g, rho, theta))
        below = [row.q_min for row in rows if row.r < base]
        worst = max([worst] + below)
        stab.append(stabilization_radius(rows, bound))
    bounded = worst <= bound
    monotone = all(a <= b for a, b in zip(stab, stab[1:]))
    elapsed = time.time() - start
    passed = all(spirals.values()) and bounded and monotone and elapsed < 300
    acceptance_line(5, "hairy-lot spiral", passed,
                    f"spirals (4,1) at T=2,3,4: {list(spirals.values())}; hairs {hairs}; max q_min below base "
                    f"{worst} (bound {bound}); stabilization radii {[str(s) for s in stab]}; {elapsed:.1f}s")
    assert all(spirals.values())
    assert bounded and monotone
    assert elapsed < 300


def _pruned_words(max_len: int):
    """Freely reduced words with no adjacent commuting pair in decreasing alphabet order."""
    order = {x: i for i, x in enumerate(ck.ALPHABET)}
    stack = [("", None)]
    while stack:
        w, last = stack.pop()
        yield w
        if len(w) == max_len:
            continue
        for x in ck.ALPHABET:
            if last is not None and (x == ck.inverse_letter(last) or (
                    ck.commutes(last, x) and x.lower() != last.lower() and order[x] < order[last])):
                continue
            stack.append((w + x, x))


def test_criterion_6_ck_word_metric():
    start = time.time()
    bfs = ck.ball_distances(8)
    count, mismatches = 0, []
    for w in _pruned_words(8):
        count += 1
        if ck.geodesic_length(w) != bfs[ck.element_key(w)][0]:
            mismatches.append(w)
    rng = random.Random(6)
    for _ in range(10 ** 4):
        w = "".join(rng.choice(ck.ALPHABET) for _ in range(rng.randint(0, 8)))
        d = bfs[ck.element_key(w)][0]
        if ck.geodesic_length(w) != d or len(cancel_reduce(w)) != d:
            mismatches.append(w)
    elapsed = time.time() - start
    passed = not mismatches and elapsed < 600
    acceptance_line(6, "CK word metric", passed, f"{count} pruned words + 10000 random words against a BFS ball "
                                                 f"of {len(bfs)} elements; {len(mismatches)} mismatches; "
                                                 f"{elapsed:.1f}s")
    assert not mismatches, mismatches[:5]
    assert elapsed < 600


def _random_syllable(rng, letters: str, max_len: int) -> str:
    return ck.normal_form("".join(rng.choice(letters + letters.upper()) for _ in range(rng.randint(0, max_len))))


def test_criterion_7_ck_spiral():
    start = time.time()
    rng = random.Random(7)
    schedule_errors = []
    for _ in range(20):
        T = rng.randint(1, 8)
        stages = []
        for _ in range(rng.randint(1, 3)):
            stages += [_random_syllable(rng, "abc", 4), _random_syllable(rng, "bcd", 4)]
        res = ck.spiral_to_zeta(stages, T)
        v_k, w_k = stages[-2], stages[-1]
        if res.stage_times[1] != 11 * T + len(w_k) + len(v_k):
            schedule_errors.append((T, stages, res.stage_times))
    ball = ck.cayley_ball(6)
    constants, in_ball = {}, []
    for r in (4, 8, 16, 32):
        res = ck.spiral_to_zeta([ck.power("a", r // 2), ck.power("d", r // 2)], r)
        q = ck.word_min_q(res.path, res.times, 0)
        constants[r] = q
        m = 0
        while m < len(res.path) and ck.geodesic_length(res.path[:m + 1]) <= 6:
            m += 1
        part = QGPath(ball, tuple(res.times[:m + 1]), tuple(ck.word_path_vertices(ball, res.path[:m])), None, 1)
        in_ball.append(verify_qq(part, QQ(q, 0), 0).passed)
    qs = list(constants.values())
    spread = (max(qs) - min(qs)) / min(qs)
    elapsed = time.time() - start
    passed = not schedule_errors and all(in_ball) and spread <= Fraction(1, 4) and elapsed < 180
    acceptance_line(7, "CK spiral", passed,
                    f"20 schedules, {len(schedule_errors)} off the closed form; constants "
                    f"{ {r: str(q) for r, q in constants.items()} } spread {float(spread):.1%}; in-ball portions "
                    f"pass {in_ball}; {elapsed:.1f}s")
    assert not schedule_errors, schedule_errors[:3]
    assert all(in_ball) and spread <= Fraction(1, 4)
    assert elapsed < 180


def test_criterion_8_excursions():
    start = time.time()
    K, rho = 64, Fraction(1, 4)
    families = {"constant:1": "subexponential-at-scale", "constant:3": "subexponential-at-scale",
                "constant:7": "subexponential-at-scale", "enlargement:1": "subexponential-at-scale",
                "exponential:3/2": "exponential-at-scale"}
    problems = []
    for fam, label in families.items():
        lengths = excursion_family(fam, K)
        if ck.classify_excursion(lengths, K).label != label:
            problems.append((fam, "label"))
        for r in (4, 8, 16):
            res = ck.chase_spiral(lengths, rho, r)
            if fam.startswith("exponential") and res.verdict != "catches":
                problems.append((fam, r, res.verdict))
            if fam.startswith("enlargement") and res.verdict == "catches":
                problems.append((fam, r, res.verdict))
            if fam.startswith("constant") and res.catch_index is not None and res.catch_index > 6:
                problems.append((fam, r, res.catch_index))
    enl = ck.enlargement_family(1, K)
    rep = ck.sublinear_excursion_check(enl.lengths, K)
    recurrent = [k for k, _ in enl.spikes[1:] if enl.lengths[k - 1] / sum(enl.lengths[: k - 1]) >= 1]
    if rep.sublinear or len(recurrent) != len(enl.spikes) - 1:
        problems.append(("enlargement", "sublinear", rep.tail_max))
    elapsed = time.time() - start
    passed = not problems and elapsed < 60
    acceptance_line(8, "excursion classification", passed,
                    f"{len(families)} families labelled, chase at rho=1/4 r=4,8,16; enlargement spikes with ratio "
                    f">= 1 at {recurrent}; problems {problems}; {elapsed:.1f}s")
    assert not problems
    assert elapsed < 60


def _chain(a, b, c, r, Q=2):
    cert1 = None
    for q1 in (1, Fraction(3, 2), 2, 3, Fraction(9, 2)):
        cert1 = search_redirection(a, b, r, QQ(q1, Q)).certificate
        if cert1 is not None:
            break
    if cert1 is None:
        return None
    for q2 in (1, Fraction(3, 2), 2):
        qq2 = QQ(q2, Q)
        try:
            return cert1, qq2, compose_certificates(cert1, search_factory(b, c, qq2), qq2)
        except (SurgeryError, ValueError):
            continue
    return None


def test_criterion_9_transitivity():
    start = time.time()
    rng = random.Random(9)
    grid = build_product(build_ray(96), build_ray(96), 96)
    grid_rays = [product_ray(grid, *d) for d in [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (3, 1)]]
    xk = xk_rays(build_xk(3, 200))
    xk_chains = [("alpha0", "alpha0", "beta"), ("alpha0", "beta", "beta"), ("beta", "beta", "beta"),
                 ("alpha0", "alpha0", "alpha0")]
    done, gated, failures, kinds = 0, 0, [], {"grid": 0, "xk": 0}
    for attempt in range(200):
        if done >= 50:
            break
        if attempt % 5 == 4:
            kind, (a, b, c) = "xk", (xk[n] for n in rng.choice(xk_chains))
        else:
            kind, (a, b, c) = "grid", (rng.choice(grid_rays) for _ in range(3))
        r = rng.choice([2, 4])
        out = _chain(a, b, c, r)
        if out is None:
            gated += 1
            continue
        cert1, qq2, cert = out
        expected = QQ(max(qq2.q + 1, cert1.qq.q), max(cert1.qq.Q, qq2.Q))
        ok = (cert.source is a and cert.target is c and cert.qq == expected
              and verify_qq(cert.witness, expected, 2 * cert.witness.h).passed)
        if not ok:
            failures.append((kind, a.name, b.name, c.name, r))
        done += 1
        kinds[kind] += 1
    elapsed = time.time() - start
    passed = done >= 50 and not failures and elapsed < 120
    acceptance_line(9, "transitivity", passed, f"{done} chains composed ({kinds}), {gated} gated by the horizon, "
                                               f"{len(failures)} failures; {elapsed:.1f}s")
    assert done >= 50 and not failures, failures[:3]
    assert elapsed < 120


def test_criterion_10_determinism(tmp_path):
    start = time.time()
    differing = []
    names = bundled_manifests()
    for name in names:
        a = run_experiment(name, tmp_path / f"{name}-1")
        b = run_experiment(name, tmp_path / f"{name}-2")
        for f in ("probes.csv", "summary.json"):
            if (a.out_dir / f).read_bytes() != (b.out_dir / f).read_bytes():
                differing.append((name, f))
    elapsed = time.time() - start
    passed = not differing
    acceptance_line(10, "determinism", passed, f"{len(names)} bundled manifests rerun, byte differences "
                                               f"{differing}; {elapsed:.1f}s")
    assert not differing
