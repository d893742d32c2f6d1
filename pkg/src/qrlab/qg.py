"""Quasi-geodesic paths on a :class:`~qrlab.space.MetricGraph`.

A path is a finite list of ``(time, vertex)`` samples.  Checks run over all
sample pairs (up to a deterministic subsampling cap) with exact rational
arithmetic; numpy is only used to find the pairs worth checking exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from qrlab.space import MetricGraph, Number, _UNREACHABLE, as_fraction, geodesic

SAMPLE_CAP = 4000


class HorizonError(ValueError):
    """The realization is too short for the request; increase the horizon."""


@dataclass(frozen=True, order=False)
class QQ:
    """Constant pair ``(q, Q)`` with ``q >= 1`` and ``Q >= 0``."""

    q: Fraction
    Q: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "q", as_fraction(self.q))
        object.__setattr__(self, "Q", as_fraction(self.Q))
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.Q < 0:
            raise ValueError(f"Q must be >= 0, got {self.Q}")

    def __le__(self, other: "QQ") -> bool:
        return self.q <= other.q and self.Q <= other.Q

    def __ge__(self, other: "QQ") -> bool:
        return other <= self

    def join(self, other: "QQ") -> "QQ":
        return QQ(max(self.q, other.q), max(self.Q, other.Q))

    def as_tuple(self) -> tuple[Fraction, Fraction]:
        return (self.q, self.Q)

    def __str__(self) -> str:
        return f"({self.q}, {self.Q})"


@dataclass(frozen=True)
class QGPath:
    graph: MetricGraph = field(repr=False, compare=False)
    times: tuple[Fraction, ...]
    vertices: tuple[int, ...]
    claimed: QQ | None = None
    h: Fraction = Fraction(1)

    def __post_init__(self):
        times = tuple(as_fraction(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "vertices", tuple(int(v) for v in self.vertices))
        object.__setattr__(self, "h", as_fraction(self.h))
        if len(times) != len(self.vertices):
            raise ValueError("one vertex per sample time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must increase strictly")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def start(self) -> Fraction:
        return self.times[0]

    @property
    def end(self) -> Fraction:
        return self.times[-1]

    def shifted(self, dt: Number) -> "QGPath":
        dt = as_fraction(dt)
        return replace(self, times=tuple(t + dt for t in self.times))

    def window(self, lo: Number | None = None, hi: Number | None = None) -> "QGPath":
        """Samples with ``lo <= t <= hi``."""
        keep = [
            i for i, t in enumerate(self.times)
            if (lo is None or t >= lo) and (hi is None or t <= hi)
        ]
        return replace(self, times=tuple(self.times[i] for i in keep), vertices=tuple(self.vertices[i] for i in keep))

    def index_at(self, t: Number) -> int:
        """Index of the sample nearest to ``t`` (earlier sample on ties)."""
        t = as_fraction(t)
        i = int(np.searchsorted(np.array([float(x) for x in self.times]), float(t)))
        best = None
        for j in (i - 2, i - 1, i, i + 1):
            if 0 <= j < len(self.times):
                key = (abs(self.times[j] - t), j)
                if best is None or key < best:
                    best = key
        return best[1]

    def at(self, t: Number) -> int:
        return self.vertices[self.index_at(t)]

    def norms(self) -> list[Fraction]:
        g = self.graph
        row = g.row(g.basepoint)
        return [g.unscale(int(row[v])) for v in self.vertices]

    @classmethod
    def from_walk(
        cls, g: MetricGraph, vertices: Sequence[int], t0: Number = 0, claimed: QQ | None = None, h: Number | None = None,
    ) -> "QGPath":
        """Arc-length parametrized walk; consecutive vertices must be adjacent."""
        t = as_fraction(t0)
        times = [t]
        for a, b in zip(vertices, vertices[1:]):
            times.append(times[-1] + edge_weight(g, a, b))
        return cls(g, tuple(times), tuple(vertices), claimed, g.mesh() if h is None else h)


def edge_weight(g: MetricGraph, a: int, b: int) -> Fraction:
    for y, w in g.adj[a]:
        if y == b:
            return Fraction(w, g.scale)
    raise ValueError(f"vertices {a} and {b} are not adjacent")


@dataclass(frozen=True)
class Tail:
    """Symbolic description of how a ray continues past its realized part."""

    kind: str  # follow_axis | exit_hair | geodesic_continuation | word_tail | finite
    params: tuple = ()

    def __str__(self) -> str:
        inner = ", ".join(str(p) for p in self.params)
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class RaySpec:
    """A basepointed ray: a realized path plus a symbolic tail."""

    name: str
    path: QGPath
    tail: Tail = Tail("finite")

    def __post_init__(self):
        g = self.path.graph
        if self.path.vertices[0] != g.basepoint or self.path.times[0] != 0:
            raise ValueError(f"ray {self.name} must start at the basepoint at time 0")

    @property
    def graph(self) -> MetricGraph:
        return self.path.graph

    @property
    def horizon(self) -> Fraction:
        return self.path.end

    def realize(self, H: Number | None = None) -> QGPath:
        if H is None:
            return self.path
        H = as_fraction(H)
        if H > self.horizon:
            raise HorizonError(f"ray {self.name} is realized only up to {self.horizon}; increase H")
        return self.path.window(None, H)


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    qq: QQ
    slack: Fraction
    worst: tuple[Fraction, Fraction, Fraction] | None  # (t_i, t_j, gap); gap > 0 is a violation
    kind: str | None  # "lower" / "upper" for the worst pair
    pairs: int
    subsampled: bool

    def __bool__(self) -> bool:
        return self.passed


def subsample_indices(n: int, cap: int = SAMPLE_CAP) -> list[int]:
    if n <= cap:
        return list(range(n))
    idx = sorted({round(i * (n - 1) / (cap - 1)) for i in range(cap)})
    return idx


def _pair_data(path: QGPath, cap: int):
    if len(path) == 0:
        raise ValueError("empty path")
    g = path.graph
    idx = subsample_indices(len(path), cap)
    verts = [path.vertices[i] for i in idx]
    times = [path.times[i] for i in idx]
    distinct = sorted(set(verts))
    pos = {v: k for k, v in enumerate(distinct)}
    sub = g.block(distinct, distinct)
    sel = np.array([pos[v] for v in verts], dtype=np.int64)
    D = sub[sel][:, sel]
    return idx, times, D


def verify_qq(path: QGPath, qq: QQ, slack: Number | None = None, cap: int = SAMPLE_CAP) -> VerificationReport:
    """Check ``|dt|/q - Q - slack <= d <= q|dt| + Q + slack`` on every sample pair.

    ``slack`` defaults to twice the path mesh.  The report carries the pair
    with the largest gap (a violation when the gap is positive).
    """
    slack = 2 * path.h if slack is None else as_fraction(slack)
    idx, times, D = _pair_data(path, cap)
    n = len(times)
    g = path.graph
    if n == 1:
        return VerificationReport(True, qq, slack, None, None, 0, len(idx) < len(path))
    q, Q = qq.q, qq.Q
    tf = np.array([float(t) for t in times])
    dt = np.abs(tf[:, None] - tf[None, :])
    unreachable = D == _UNREACHABLE
    df = np.where(unreachable, np.inf, D / g.scale)
    lower = dt / float(q) - float(Q) - float(slack) - df
    upper = df - float(q) * dt - float(Q) - float(slack)
    iu = np.triu_indices(n, 1)
    gaps = np.maximum(lower, upper)[iu]
    top = float(np.max(gaps))
    tol = 1e-7 * (1 + abs(top))
    cand = np.nonzero(gaps >= top - tol)[0]
    if len(cand) > 4096:
        cand = cand[np.argsort(-gaps[cand], kind="stable")[:4096]]
    best = None
    for c in sorted(cand.tolist()):
        i, j = int(iu[0][c]), int(iu[1][c])
        if D[i, j] == _UNREACHABLE:
            gap, kind = Fraction(10**9), "upper"
        else:
            d = Fraction(int(D[i, j]), g.scale)
            delta = times[j] - times[i]
            lo = delta / q - Q - slack - d
            up = d - q * delta - Q - slack
            gap, kind = (lo, "lower") if lo >= up else (up, "upper")
        if best is None or gap > best[0]:
            best = (gap, kind, times[i], times[j])
    gap, kind, ti, tj = best
    return VerificationReport(gap <= 0, qq, slack, (ti, tj, gap), kind, n * (n - 1) // 2, len(idx) < len(path))


def min_q(path: QGPath, Q: Number = 0, cap: int = SAMPLE_CAP) -> Fraction | float:
    """Least ``q`` with ``verify_qq(path, (q, Q), slack=0)`` passing.

    Equals the maximum over sample pairs of ``max(dt/(d+Q), (d-Q)/dt)``,
    clipped below at 1; ``math.inf`` if a pair has ``d + Q == 0``.
    """
    Q = as_fraction(Q)
    idx, times, D = _pair_data(path, cap)
    n = len(times)
    if n == 1:
        return Fraction(1)
    g = path.graph
    tf = np.array([float(t) for t in times])
    iu = np.triu_indices(n, 1)
    dt = (tf[None, :] - tf[:, None])[iu]
    d_int = D[iu]
    if np.any(d_int == _UNREACHABLE):
        return math.inf
    df = d_int / g.scale
    with np.errstate(divide="ignore"):
        r1 = np.where(df + float(Q) > 0, dt / np.maximum(df + float(Q), 1e-300), np.inf)
    r2 = (df - float(Q)) / dt
    vals = np.maximum(r1, r2)
    top = float(np.max(vals))
    if math.isinf(top):
        return math.inf
    cand = np.nonzero(vals >= top * (1 - 1e-9) - 1e-12)[0]
    best = Fraction(1)
    for c in cand.tolist():
        i, j = int(iu[0][c]), int(iu[1][c])
        d = Fraction(int(d_int[c]), g.scale)
        delta = times[j] - times[i]
        v = max(delta / (d + Q) if d + Q > 0 else Fraction(10**18), (d - Q) / delta)
        best = max(best, v)
    return best


def lipschitz_gap(path: QGPath, L: Number, slack: Number = 0) -> Fraction:
    """Largest ``d(p_i, p_{i+1}) - L*dt - slack`` over consecutive samples."""
    L, slack = as_fraction(L), as_fraction(slack)
    g = path.graph
    worst = Fraction(-(10**9))
    for (t0, v0), (t1, v1) in zip(zip(path.times, path.vertices), zip(path.times[1:], path.vertices[1:])):
        d = g.unscale(int(g.row(v0)[v1])) if v0 != v1 else Fraction(0)
        worst = max(worst, d - L * (t1 - t0) - slack)
    return worst


def pointwise_distance(a: QGPath, b: QGPath) -> Fraction:
    """``max_t d(a(t), b(t))`` over the sample times of ``a`` (``b`` read at its nearest sample)."""
    g = a.graph
    worst = Fraction(0)
    for t, v in zip(a.times, a.vertices):
        w = b.at(t)
        if v != w:
            worst = max(worst, g.unscale(int(g.row(v)[w])))
    return worst


def tame(path: QGPath, qq: QQ | None = None) -> QGPath:
    """Replace ``path`` by geodesic interpolation between anchors spaced in ``[1/2, 1]``.

    Anchors are snapped to the nearest existing sample time.  The output
    claims ``(q + Q, q + 1/q + 2Q)``.
    """
    qq = qq or path.claimed
    if qq is None:
        raise ValueError("tame needs the input constants")
    length = path.end - path.start
    if length < 1:
        raise ValueError("domain shorter than 1")
    g = path.graph
    k = math.ceil(length)
    anchors: list[int] = []
    for i in range(k + 1):
        j = path.index_at(path.start + length * i / k)
        if not anchors or j != anchors[-1]:
            anchors.append(j)
    times: list[Fraction] = []
    verts: list[int] = []
    for a, b in zip(anchors, anchors[1:]):
        ta, tb = path.times[a], path.times[b]
        va, vb = path.vertices[a], path.vertices[b]
        if va == vb:
            seg_t, seg_v = [ta], [va]
        else:
            gp = geodesic(g, va, vb)
            seg_t = [ta + (tb - ta) * s / gp.length for s in gp.params[:-1]]
            seg_v = list(gp.vertices[:-1])
        times.extend(seg_t)
        verts.extend(seg_v)
    times.append(path.times[anchors[-1]])
    verts.append(path.vertices[anchors[-1]])
    out_qq = QQ(qq.q + qq.Q, qq.q + 1 / qq.q + 2 * qq.Q)
    return QGPath(g, tuple(times), tuple(verts), out_qq, path.h)


def concat(alpha: QGPath, beta: QGPath) -> QGPath:
    """``alpha`` followed by ``beta`` shifted so that it starts where ``alpha`` ends."""
    if alpha.vertices[-1] != beta.vertices[0]:
        raise ValueError("concat: end of first path is not the start of the second")
    shift = alpha.end - beta.start
    # Concatenation does not inherit constants.
    return QGPath(
        alpha.graph,
        alpha.times + tuple(t + shift for t in beta.times[1:]),
        alpha.vertices + beta.vertices[1:],
        None,
        max(alpha.h, beta.h),
    )


class Restriction(NamedTuple):
    prefix: QGPath  # alpha|_r
    t_r: Fraction
    T_r: Fraction
    suffix: QGPath  # alpha|_{>= r}


def restrict(ray: RaySpec | QGPath, r: Number) -> Restriction:
    """Split a ray at the first exit time ``t_r`` and last return time ``T_r`` of ``B_r``."""
    path = ray.path if isinstance(ray, RaySpec) else ray
    r = as_fraction(r)
    norms = path.norms()
    if max(norms) <= r:
        raise HorizonError(f"realization never leaves B_{r}; increase H")
    i_first = next(i for i, x in enumerate(norms) if x >= r)
    i_last = max(i for i, x in enumerate(norms) if x <= r)
    t_r, T_r = path.times[i_first], path.times[i_last]
    return Restriction(path.window(None, t_r), t_r, T_r, path.window(T_r, None))


def path_to_dict(path: QGPath | RaySpec, space: str = "") -> dict:
    """Path JSON: ``{"space", "times", "vertices", "claimed_qq"?, "h"}`` plus ``name``/``tail`` for rays."""
    ray = path if isinstance(path, RaySpec) else None
    p = ray.path if ray else path
    out = {
        "space": space,
        "times": [str(t) for t in p.times],
        "vertices": list(p.vertices),
        "h": str(p.h),
    }
    if p.claimed is not None:
        out["claimed_qq"] = [str(p.claimed.q), str(p.claimed.Q)]
    if ray:
        out["name"] = ray.name
        out["tail"] = {"kind": ray.tail.kind, "params": [str(x) for x in ray.tail.params]}
    return out


def path_from_dict(data: dict, g: MetricGraph) -> QGPath:
    claimed = data.get("claimed_qq")
    return QGPath(
        g,
        tuple(Fraction(t) for t in data["times"]),
        tuple(g.vid(v) for v in data["vertices"]),
        QQ(Fraction(claimed[0]), Fraction(claimed[1])) if claimed else None,
        Fraction(data.get("h", "1")),
    )


def ray_from_dict(data: dict, g: MetricGraph) -> RaySpec:
    tail = data.get("tail", {"kind": "finite", "params": []})
    return RaySpec(data.get("name", "ray"), path_from_dict(data, g), Tail(tail["kind"], tuple(tail["params"])))
