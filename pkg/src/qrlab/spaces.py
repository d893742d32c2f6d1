"""Generators for the example spaces, their distinguished rays and spiral paths.

Every generator is deterministic: equal parameters give byte-identical JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from qrlab.qg import QQ, QGPath, RaySpec, Tail, verify_qq
from qrlab.space import MetricGraph, Number, as_fraction, fraction_str


class _Builder:
    """Collects labelled vertices and weighted edges."""

    def __init__(self):
        self.labels: list[str] = []
        self.coords: list[tuple | None] = []
        self.index: dict[str, int] = {}
        self.edges: list[tuple[int, int, Fraction]] = []

    def vertex(self, label: str, coord: tuple | None = None) -> int:
        if label in self.index:
            return self.index[label]
        self.index[label] = len(self.labels)
        self.labels.append(label)
        self.coords.append(coord)
        return self.index[label]

    def edge(self, u: int, v: int, w: Number):
        self.edges.append((u, v, as_fraction(w)))

    def chain(self, start: int, length: Fraction, prefix: str, coord_fn=None) -> int:
        """Subdivided segment of ``length`` from ``start``: unit pieces plus one remainder piece."""
        pieces = [Fraction(1)] * int(length)
        rest = length - int(length)
        if rest:
            pieces.append(rest)
        prev = start
        for j, w in enumerate(pieces[:-1], start=1):
            cur = self.vertex(f"{prefix}:{j}", coord_fn(j) if coord_fn else None)
            self.edge(prev, cur, w)
            prev = cur
        end_label = f"{prefix}:{len(pieces)}"
        return prev, pieces[-1], end_label

    def build(self, basepoint: int, meta: dict) -> MetricGraph:
        return MetricGraph(len(self.labels), self.edges, basepoint, self.labels, self.coords, meta)


def _ray_path(g: MetricGraph, labels: list[str], h: Number = 1) -> QGPath:
    return QGPath.from_walk(g, [g.vid(lab) for lab in labels], h=h)


# -- X_k ----------------------------------------------------------------------


def build_xk(k: int, R: int) -> MetricGraph:
    """Two unit-mesh rays ``a`` and ``b`` from ``o`` plus connectors ``a(n)`` to ``b(n^2)`` of length ``n^2/k``.

    ``a`` is realized to ``R`` and ``b`` to ``k*R``; a connector is present
    whenever its length ``n^2/k`` is at most ``R``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if R < 1:
        raise ValueError("R must be >= 1")
    b = _Builder()
    o = b.vertex("o", (0, 0))
    prev = o
    for i in range(1, R + 1):
        cur = b.vertex(f"a:{i}", (0, i))
        b.edge(prev, cur, 1)
        prev = cur
    prev = o
    for i in range(1, k * R + 1):
        cur = b.vertex(f"b:{i}", (1, i))
        b.edge(prev, cur, 1)
        prev = cur
    n = 1
    connectors = []
    while Fraction(n * n, k) <= R:
        length = Fraction(n * n, k)
        last, w, _ = b.chain(b.index[f"a:{n}"], length, f"w:{n}")
        b.edge(last, b.index[f"b:{n * n}"], w)
        connectors.append(n)
        n += 1
    meta = {"generator": "xk", "k": k, "R": R, "h": 1, "connectors": connectors}
    return b.build(o, meta)


def xk_rays(g: MetricGraph) -> dict[str, RaySpec]:
    k, R = g.meta["k"], g.meta["R"]
    alpha = ["o"] + [f"a:{i}" for i in range(1, R + 1)]
    beta = ["o"] + [f"b:{i}" for i in range(1, k * R + 1)]
    return {
        "alpha0": RaySpec("alpha0", _ray_path(g, alpha), Tail("follow_axis", ("a", 1))),
        "beta": RaySpec("beta", _ray_path(g, beta), Tail("follow_axis", ("b", 1))),
    }


# -- example with Assumption 2 failing -------------------------------------------


def _slope_weight(n: int) -> Fraction:
    # arc length of one unit of x along y = n x, rounded to quarters
    return Fraction(round(4 * math.sqrt(1 + n * n)), 4)


def build_example2(R: int) -> MetricGraph:
    """Rays ``a_0`` (x-axis), ``b`` (y-axis) and ``a_n`` (``y = n x``) with segments and hairs.

    Ray vertices sit at integer x (integer y for ``b``).  The segment
    ``omega_{k,n}`` of length ``k n^2`` joins ``a_n(kn)`` to ``a_0(kn)`` for
    ``kn <= R`` and carries a hair of length ``R/4`` at its midpoint.  The
    region under ``y = 1/x`` is coarsened to one edge ``a_0(1) - b(1)``.
    """
    if R < 4:
        raise ValueError("R must be >= 4")
    bld = _Builder()
    o = bld.vertex("o", (0, 0))
    for name, step in [("a0", Fraction(1)), ("b", Fraction(1))] + [(f"a{n}", _slope_weight(n)) for n in range(1, R + 1)]:
        prev = o
        for i in range(1, R + 1):
            cur = bld.vertex(f"{name}:{i}")
            bld.edge(prev, cur, step)
            prev = cur
    bld.edge(bld.index["a0:1"], bld.index["b:1"], Fraction(3, 2))
    hair_len = max(1, R // 4)
    for n in range(1, R + 1):
        for k in range(1, R // n + 1):
            L = k * n * n
            prefix = f"om:{k}:{n}"
            start = bld.index[f"a{n}:{k * n}"]
            end = bld.index[f"a0:{k * n}"]
            # unit pieces, with the middle piece halved when L is odd
            pieces = [Fraction(1)] * L
            if L % 2:
                mid = L // 2
                pieces = pieces[:mid] + [Fraction(1, 2), Fraction(1, 2)] + pieces[mid + 1:]
            prev = start
            acc = Fraction(0)
            midpoint = None
            for j, w in enumerate(pieces[:-1], start=1):
                cur = bld.vertex(f"{prefix}:{j}")
                bld.edge(prev, cur, w)
                acc += w
                if acc * 2 == L:
                    midpoint = cur
                prev = cur
            bld.edge(prev, end, pieces[-1])
            prev = midpoint
            for j in range(1, hair_len + 1):
                cur = bld.vertex(f"hair:{k}:{n}:{j}")
                bld.edge(prev, cur, 1)
                prev = cur
    meta = {"generator": "example2", "R": R, "h": 1, "filling": "single edge a0(1)-b(1) of weight 3/2"}
    return bld.build(o, meta)


def example2_rays(g: MetricGraph, ns: list[int] | None = None) -> dict[str, RaySpec]:
    R = g.meta["R"]
    out = {}
    for name in ["a0", "b"] + [f"a{n}" for n in (ns or [1, 2, 3])]:
        labels = ["o"] + [f"{name}:{i}" for i in range(1, R + 1)]
        out[name] = RaySpec(name, _ray_path(g, labels), Tail("follow_axis", (name, 1)))
    return out


# -- hairy parking lot -------------------------------------------------------------


def _dtheta(rho: Fraction, h: Fraction) -> Fraction:
    """Angular step on ring ``rho``: ``h / 2^k`` with ``2^k <= rho < 2^(k+1)``."""
    k = max(0, math.floor(math.log2(rho)))
    while 2 ** (k + 1) <= rho:
        k += 1
    while 2**k > rho:
        k -= 1
    return h / 2**k


def _ptlabel(rho: Fraction, theta: Fraction) -> str:
    return f"p:{fraction_str(rho)}:{fraction_str(theta)}"


def build_hairy_lot(
    theta_min: Number, theta_max: Number, rho_max: Number, h: Number = Fraction(1, 4),
    hair_length: int | None = None, hair_net: int = 1,
) -> MetricGraph:
    """Mesh-``h`` polar grid of the unrolled annulus with hairs at integer ``(rho, theta)``.

    Ring ``rho`` carries angles at multiples of ``_dtheta(rho, h)``, so
    neighbouring points on a ring are between ``h`` and ``2h`` apart.  Radial
    edges have weight ``h``; angular edges at radius ``rho`` weigh
    ``rho * dtheta``.  The resulting path metric is the polar L1 metric
    ``|d rho| + rho |d theta|`` up to mesh error.
    """
    tmin, tmax, rmax, h = (as_fraction(x) for x in (theta_min, theta_max, rho_max, h))
    if h > Fraction(1, 2):
        raise ValueError("mesh too coarse: h must be <= 1/2")
    if not tmin < 0 < tmax:
        raise ValueError("need theta_min < 0 < theta_max")
    if (1 / h).denominator != 1 or tmin / h != int(tmin / h) or tmax / h != int(tmax / h) or (rmax - 1) / h != int((rmax - 1) / h):
        raise ValueError("h must be 1/m and theta range and rho_max - 1 multiples of h")
    hair_length = int(rmax) if hair_length is None else hair_length
    bld = _Builder()
    rings = [1 + i * h for i in range(int((rmax - 1) / h) + 1)]
    prev_ring: list[Fraction] = []
    for rho in rings:
        dt = _dtheta(rho, h)
        thetas = [tmin + j * dt for j in range(int((tmax - tmin) / dt) + 1)]
        ids = [bld.vertex(_ptlabel(rho, th), (rho, th)) for th in thetas]
        for a, c in zip(ids, ids[1:]):
            bld.edge(a, c, rho * dt)
        for th in prev_ring:
            bld.edge(bld.index[_ptlabel(rho - h, th)], bld.index[_ptlabel(rho, th)], h)
        prev_ring = thetas
    hairs = []
    if hair_length > 0:
        for rho in range(1, int(rmax) + 1, hair_net):
            for th in range(math.ceil(tmin), math.floor(tmax) + 1):
                if th % hair_net:
                    continue
                prev = bld.index[_ptlabel(Fraction(rho), Fraction(th))]
                for j in range(1, hair_length + 1):
                    cur = bld.vertex(f"h:{rho}:{th}:{j}", (rho, th, j))
                    bld.edge(prev, cur, 1)
                    prev = cur
                hairs.append([rho, th])
    meta = {
        "generator": "hairylot", "theta_min": fraction_str(tmin), "theta_max": fraction_str(tmax),
        "rho_max": fraction_str(rmax), "h": fraction_str(h), "hair_length": hair_length, "hair_net": hair_net,
    }
    o = bld.index[_ptlabel(Fraction(1), Fraction(0))]
    return bld.build(o, meta)


def _lot_params(g: MetricGraph):
    m = g.meta
    if m.get("generator") != "hairylot":
        raise ValueError("not a hairy lot")
    return (Fraction(m["theta_min"]), Fraction(m["theta_max"]), Fraction(m["rho_max"]), Fraction(m["h"]))


def polar_vertex(g: MetricGraph, rho: Number, theta: Number) -> int:
    """Grid vertex nearest to ``(rho, theta)``; ties go to the smaller coordinate."""
    tmin, tmax, rmax, h = _lot_params(g)
    rho, theta = as_fraction(rho), as_fraction(theta)
    if not (1 <= rho <= rmax and tmin <= theta <= tmax):
        raise ValueError(f"({rho}, {theta}) lies outside the built annulus")
    ring = 1 + _round_half_down((rho - 1) / h) * h
    dt = _dtheta(ring, h)
    th = tmin + _round_half_down((theta - tmin) / dt) * dt
    return g.vid(_ptlabel(ring, th))


def _round_half_down(x: Fraction) -> int:
    f = math.floor(x)
    return f + 1 if x - f > Fraction(1, 2) else f


def polar_coord(g: MetricGraph, v: int) -> tuple[Fraction, Fraction]:
    """``(rho, theta)`` of an annulus vertex, or of the base of a hair vertex."""
    c = g.coords[v]
    return (as_fraction(c[0]), as_fraction(c[1]))


def _polar_path(g: MetricGraph, points, end: Fraction, h: Fraction, hair=None) -> QGPath:
    """Sample ``points(t)`` at multiples of ``h`` up to ``end`` and snap to the grid."""
    steps = int(end / h)
    times, verts = [], []
    for i in range(steps + 1):
        t = i * h
        rho, theta = points(t)
        times.append(t)
        verts.append(polar_vertex(g, rho, theta))
    return QGPath(g, tuple(times), tuple(verts), None, h)


def hairy_rays(g: MetricGraph) -> dict[str, RaySpec]:
    """``alpha_plus``, ``alpha_minus`` and ``zeta`` realized to the edge of the annulus."""
    tmin, tmax, rmax, h = _lot_params(g)
    return {
        "alpha_plus": RaySpec(
            "alpha_plus", _polar_path(g, lambda t: (1, t), tmax, h), Tail("follow_axis", ("theta", 1))),
        "alpha_minus": RaySpec(
            "alpha_minus", _polar_path(g, lambda t: (1, -t), -tmin, h), Tail("follow_axis", ("theta", -1))),
        "zeta": RaySpec("zeta", _polar_path(g, lambda t: (1 + t, 0), rmax - 1, h), Tail("follow_axis", ("rho", 1))),
    }


def hair_ray(g: MetricGraph, rho: int, theta: int) -> RaySpec:
    """Along the inner circle to angle ``theta``, straight out to ``rho``, then up the hair."""
    tmin, tmax, rmax, h = _lot_params(g)
    L = int(g.meta["hair_length"])
    if f"h:{rho}:{theta}:1" not in g.index:
        raise ValueError(f"no hair at ({rho}, {theta})")
    s = 1 if theta >= 0 else -1
    a = abs(theta)
    base = a + rho - 1
    times, verts = [], []
    for i in range(int(base / h) + 1):
        t = i * h
        times.append(t)
        verts.append(polar_vertex(g, 1, s * t) if t <= a else polar_vertex(g, t - a + 1, theta))
    for j in range(1, L + 1):
        times.append(base + j)
        verts.append(g.vid(f"h:{rho}:{theta}:{j}"))
    path = QGPath(g, tuple(times), tuple(verts), None, h)
    return RaySpec(f"hair({rho},{theta})", path, Tail("exit_hair", (rho, theta)))


def log_spiral(g: MetricGraph, T: int) -> QGPath:
    """Sampled spiral: ``(1, t)`` to time ``T``, then ``(t-T+1, T - ln(t-T+1))``, then along ``zeta``."""
    tmin, tmax, rmax, h = _lot_params(g)
    if T < 1:
        raise ValueError("T must be >= 1")
    if T > tmax or math.exp(T) > rmax:
        raise ValueError("annulus too small for this spiral")
    T = Fraction(T)

    def point(t):
        if t <= T:
            return (Fraction(1), t)
        rho = t - T + 1
        if math.log(rho) < T:
            return (rho, as_fraction(float(T) - math.log(rho)))
        return (rho, Fraction(0))

    path = _polar_path(g, point, rmax + T - 1, h)
    return QGPath(g, path.times, path.vertices, QQ(4, 1), h)


@dataclass(frozen=True)
class SpiralBound:
    """Unwinding bound ``f(s) <= B ln(s + 1)`` for a ``qq``-ray leaving ``alpha_plus``."""

    qq: QQ
    speed: Fraction  # Lipschitz cap of a tame qq-ray

    @classmethod
    def for_qq(cls, qq: QQ) -> "SpiralBound":
        return cls(qq, 2 * (qq.q + qq.Q))

    @property
    def B(self) -> Fraction:
        return self.speed

    def f_bound(self, s: float) -> float:
        return float(self.B) * math.log(s + 1)


@dataclass(frozen=True)
class UnwindReport:
    passed: bool
    bound: Fraction
    observed: float
    worst_time: Fraction | None
    qq_verified: bool


def unwind_bound_check(gamma: QGPath, qq: QQ, r: Number) -> UnwindReport:
    """Compare the angle lost after leaving ``alpha_plus`` at radius ``r`` with ``B ln(s+1)``.

    ``f(s) = r - theta(gamma(r + s))``; the observed constant is the largest
    ``f(s) / ln(s + 1)``.
    """
    g = gamma.graph
    r = as_fraction(r)
    for t, v in zip(gamma.times, gamma.vertices):
        if t > r:
            break
        rho, th = polar_coord(g, v)
        if rho != 1 or abs(th - t) > _dtheta(Fraction(1), g.mesh()):
            raise ValueError("gamma does not match alpha_plus up to radius r")
    sb = SpiralBound.for_qq(qq)
    observed, worst = 0.0, None
    for t, v in zip(gamma.times, gamma.vertices):
        if t <= r:
            continue
        f = float(r - polar_coord(g, v)[1])
        if f <= 0:
            continue
        c = f / math.log(float(t - r) + 1)
        if c > observed:
            observed, worst = c, t
    ok = verify_qq(gamma, qq).passed
    return UnwindReport(observed <= float(sb.B), sb.B, observed, worst, ok)


# -- products -----------------------------------------------------------------------


def build_ray(R: int) -> MetricGraph:
    """The ray ``[0, R]`` at unit mesh."""
    edges = [(i, i + 1, 1) for i in range(R)]
    return MetricGraph(R + 1, edges, 0, [str(i) for i in range(R + 1)], [(i,) for i in range(R + 1)],
                       {"generator": "ray", "R": R, "h": 1})


def build_product(A: MetricGraph, B: MetricGraph, R: Number) -> MetricGraph:
    """Pairs with ``max(norm_A, norm_B) <= R``; factor moves plus diagonal moves of weight ``max(w_a, w_b)``."""
    R = as_fraction(R)
    da, db = A.row(A.basepoint), B.row(B.basepoint)
    keep_a = [v for v in range(A.n) if A.unscale(int(da[v])) <= R]
    keep_b = [v for v in range(B.n) if B.unscale(int(db[v])) <= R]
    ids = {}
    labels, coords = [], []
    for a in keep_a:
        for b in keep_b:
            ids[(a, b)] = len(labels)
            labels.append(f"({A.labels[a]},{B.labels[b]})")
            coords.append((a, b))
    edges = []
    set_a, set_b = set(keep_a), set(keep_b)
    ea = [(u, v, w) for u, v, w in A.edges if u in set_a and v in set_a]
    eb = [(u, v, w) for u, v, w in B.edges if u in set_b and v in set_b]
    for u, v, w in ea:
        for b in keep_b:
            edges.append((ids[(u, b)], ids[(v, b)], w))
    for u, v, w in eb:
        for a in keep_a:
            edges.append((ids[(a, u)], ids[(a, v)], w))
    for ua, va, wa in ea:
        for ub, vb, wb in eb:
            w = max(wa, wb)
            edges.append((ids[(ua, ub)], ids[(va, vb)], w))
            edges.append((ids[(ua, vb)], ids[(va, ub)], w))
    meta = {"generator": "product", "R": fraction_str(R), "h": fraction_str(max(A.mesh(), B.mesh())),
            "factors": [A.meta.get("generator", "graph"), B.meta.get("generator", "graph")]}
    return MetricGraph(len(labels), edges, ids[(A.basepoint, B.basepoint)], labels, coords, meta)


def product_ray(g: MetricGraph, dx: int, dy: int, name: str | None = None) -> RaySpec:
    """Geodesic ray ``t -> (floor(t dx/m), floor(t dy/m))``, ``m = max(dx, dy)``, in a product of two rays."""
    if dx < 0 or dy < 0 or max(dx, dy) == 0:
        raise ValueError("direction must be a nonzero nonnegative pair")
    m = max(dx, dy)
    R = int(as_fraction(g.meta["R"]))
    labels = [f"({t * dx // m},{t * dy // m})" for t in range(R + 1)]
    return RaySpec(name or f"dir({dx},{dy})", _ray_path(g, labels), Tail("geodesic_continuation", (dx, dy)))
