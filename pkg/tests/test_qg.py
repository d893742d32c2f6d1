import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import graph_dijkstra, pair_min_q
from qrlab.qg import (
    QQ, HorizonError, QGPath, concat, min_q, path_from_dict, path_to_dict, pointwise_distance, ray_from_dict,
    restrict, tame, verify_qq,
)
from qrlab.space import MetricGraph, geodesic
from qrlab.spaces import build_product, build_ray, build_xk, xk_rays


@st.composite
def walks(draw):
    n = draw(st.integers(3, 10))
    edges = [(i, i + 1, Fraction(draw(st.integers(1, 6)), 2)) for i in range(n - 1)]
    for _ in range(draw(st.integers(0, 6))):
        u, v = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        if u != v:
            edges.append((u, v, Fraction(draw(st.integers(1, 6)), 2)))
    g = MetricGraph(n, edges)
    v = draw(st.integers(0, n - 1))
    verts = [v]
    for _ in range(draw(st.integers(1, 12))):
        nbrs = sorted(y for y, _ in g.adj[verts[-1]])
        verts.append(draw(st.sampled_from(nbrs)))
    return QGPath.from_walk(g, verts)


def _oracle_min_q(path, Q):
    D = [graph_dijkstra(path.graph, v) for v in path.vertices]
    return pair_min_q(path.times, lambda i, j: D[i][path.vertices[j]], Q)


@given(walks(), st.sampled_from([0, Fraction(1, 2), 1, 3]))
def test_min_q_matches_pair_oracle(path, Q):
    assert min_q(path, Q) == _oracle_min_q(path, Q)


@given(walks(), st.sampled_from([Fraction(1, 2), 1, 2]))
def test_verify_at_min_q_is_tight(path, Q):
    m = min_q(path, Q)
    assert verify_qq(path, QQ(m, Q), 0).passed
    if m > 1:
        assert not verify_qq(path, QQ(m - Fraction(1, 1000), Q), 0).passed


@given(walks())
def test_min_q_nonincreasing_in_Q(path):
    values = [min_q(path, Q) for Q in (0, Fraction(1, 2), 1, 2, 4)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_single_sample_passes():
    g = build_ray(3)
    assert verify_qq(QGPath(g, (0,), (1,)), QQ(1, 0), 0).passed


def test_geodesic_passes_exactly():
    g = build_product(build_ray(8), build_ray(8), 8)
    gp = geodesic(g, "(0,0)", "(8,5)")
    path = QGPath(g, gp.params, gp.vertices)
    assert verify_qq(path, QQ(1, 0), 0).passed
    assert min_q(path) == 1


def test_xk_beta_prefix_constants():
    g = build_xk(3, 200)
    beta = xk_rays(g)["beta"].path
    # exact ratio maxima from the shortest-path oracle
    assert min_q(beta.window(0, 9)) == Fraction(3, 2)
    prefix = beta.window(0, 100)
    assert min_q(prefix) == Fraction(297, 128)
    assert not verify_qq(prefix, QQ(2, 0), 2).passed
    assert verify_qq(prefix, QQ(3, 0), 2).passed
    assert 2 < min_q(beta) <= 3


def test_verify_report_fields():
    g = build_xk(3, 50)
    beta = xk_rays(g)["beta"].path
    rep = verify_qq(beta, QQ(1, 0), 0)
    assert not rep.passed and rep.kind == "lower" and rep.worst[2] > 0
    assert rep.pairs == len(beta) * (len(beta) - 1) // 2


def test_tame_geodesic():
    g = build_product(build_ray(12), build_ray(12), 12)
    gp = geodesic(g, "(0,0)", "(12,7)")
    path = QGPath(g, gp.params, gp.vertices)
    out = tame(path, QQ(1, 0))
    assert out.claimed == QQ(1, 2)
    assert verify_qq(out, QQ(1, 2), 2 * out.h).passed
    assert pointwise_distance(out, path) <= 2


def test_tame_staircase():
    g = build_product(build_ray(10), build_ray(10), 10)
    labels = ["(0,0)"]
    for i in range(1, 21):
        x, y = (i + 1) // 2, i // 2
        labels.append(f"({x},{y})")
    path = QGPath.from_walk(g, [g.vid(s) for s in labels])
    assert verify_qq(path, QQ(2, 1), 0).passed
    out = tame(path, QQ(2, 1))
    assert out.claimed == QQ(3, Fraction(9, 2))
    assert verify_qq(out, out.claimed, 2 * out.h).passed
    assert pointwise_distance(out, path) <= 6
    twice = tame(out)
    assert pointwise_distance(twice, out) <= 2 * (out.claimed.q + out.claimed.Q)


def test_tame_needs_long_domain():
    g = build_ray(3)
    with pytest.raises(ValueError):
        tame(QGPath(g, (0, Fraction(1, 2)), (0, 1)), QQ(1, 0))


def test_concat():
    g = build_ray(10)
    p = QGPath.from_walk(g, [0, 1, 2, 3])
    point = QGPath(g, (0,), (3,))
    assert concat(p, point) == p
    whole = QGPath.from_walk(g, list(range(8)))
    halves = concat(whole.window(0, 4), whole.window(4, 7))
    assert halves == whole
    q = QGPath.from_walk(g, [3, 4, 5], t0=10)
    joined = concat(p, q)
    assert joined.end - joined.start == (p.end - p.start) + (q.end - q.start)
    with pytest.raises(ValueError):
        concat(p, QGPath.from_walk(g, [5, 6]))


def test_restrict():
    g = build_ray(20)
    walk = list(range(7)) + [5, 4, 5, 6] + list(range(7, 15))
    path = QGPath.from_walk(g, walk)
    res = restrict(path, 5)
    assert (res.t_r, res.T_r) == (5, 9)
    assert res.T_r > res.t_r
    geo = QGPath.from_walk(g, list(range(15)))
    res = restrict(geo, 6)
    assert res.t_r == res.T_r == 6
    res0 = restrict(geo, 0)
    assert res0.t_r == 0 and res0.prefix.vertices == (0,)
    with pytest.raises(HorizonError):
        restrict(geo, 40)


def test_qq_partial_order():
    assert QQ(2, 1) <= QQ(3, 1) and not QQ(2, 3) <= QQ(3, 1)
    assert QQ(2, 3).join(QQ(3, 1)) == QQ(3, 3)
    with pytest.raises(ValueError):
        QQ(Fraction(1, 2), 0)


def test_path_json_roundtrip():
    g = build_xk(2, 20)
    ray = xk_rays(g)["beta"]
    data = path_to_dict(ray, "xk.json")
    back = ray_from_dict(data, g)
    assert back.name == "beta" and back.path == ray.path
    p = QGPath(g, (0, Fraction(1, 3)), (0, 1), QQ(2, 1))
    assert path_from_dict(path_to_dict(p), g) == p


def test_stationary_pair_needs_additive_constant():
    g = MetricGraph(2, [(0, 1, 1)])
    path = QGPath(g, (0, 1), (0, 0))
    assert math.isinf(min_q(path, 0))
    assert min_q(path, 1) == 1
