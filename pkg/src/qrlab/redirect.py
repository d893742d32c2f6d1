"""Deciding and certifying quasi-redirection at a radius on finite truncations."""

from __future__ import annotations

import heapq
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from qrlab.qg import QQ, QGPath, RaySpec, VerificationReport, restrict, verify_qq
from qrlab.space import Number, _UNREACHABLE, as_fraction
from qrlab.surgery import _compose

W_MIN_FRACTION = Fraction(1, 4)
Q_RESOLUTION = Fraction(1, 8)
Q_CAP = 64


class RedirectionFailed(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class RedirectionCertificate:
    """``witness`` copies ``source`` up to radius ``r`` and ends on ``target``.

    For ``t >= t2`` the witness satisfies ``witness(t) = target(t + s1)``;
    ``window = (t2, end)`` is the landing window.
    """

    source: RaySpec = field(repr=False)
    target: RaySpec = field(repr=False)
    r: Fraction
    witness: QGPath = field(repr=False)
    qq: QQ
    t2: Fraction
    s1: Fraction
    window: tuple[Fraction, Fraction]
    slack: Fraction
    report: VerificationReport = field(repr=False)

    @property
    def landing_time(self) -> Fraction:
        return self.t2 + self.s1

    def digest_fields(self) -> dict:
        return {
            "source": self.source.name, "target": self.target.name, "r": str(self.r),
            "qq": [str(self.qq.q), str(self.qq.Q)], "t2": str(self.t2), "s1": str(self.s1),
            "window": [str(x) for x in self.window], "slack": str(self.slack),
            "times": [str(t) for t in self.witness.times], "vertices": list(self.witness.vertices),
        }


def _landing(gamma: QGPath, beta: QGPath) -> tuple[Fraction, Fraction] | None:
    """Longest suffix of ``gamma`` equal to a time shift of ``beta``: returns ``(t2, s1)``."""
    pos = {(t, v) for t, v in zip(beta.times, beta.vertices)}
    end_v = gamma.vertices[-1]
    best = None
    for tb, vb in zip(beta.times, beta.vertices):
        if vb != end_v:
            continue
        s1 = tb - gamma.end
        i = len(gamma) - 1
        while i > 0 and (gamma.times[i - 1] + s1, gamma.vertices[i - 1]) in pos:
            i -= 1
        t2 = gamma.times[i]
        if best is None or t2 < best[0]:
            best = (t2, s1)
    return best


def check_redirection(
    alpha: RaySpec, beta: RaySpec, gamma: QGPath, r: Number, qq: QQ, slack: Number | None = None,
    w_min_fraction: Number = W_MIN_FRACTION,
) -> RedirectionCertificate:
    """Certificate that ``gamma`` redirects ``alpha`` to ``beta`` at radius ``r``; raises :class:`RedirectionFailed`."""
    r = as_fraction(r)
    slack = 2 * gamma.h if slack is None else as_fraction(slack)
    prefix = restrict(alpha, r).prefix
    n = len(prefix)
    if len(gamma) < n or gamma.times[:n] != prefix.times or gamma.vertices[:n] != prefix.vertices:
        raise RedirectionFailed("prefix mismatch")
    land = _landing(gamma, beta.path)
    if land is None:
        raise RedirectionFailed("no landing")
    t2, s1 = land
    if gamma.end - t2 < as_fraction(w_min_fraction) * gamma.end:
        raise RedirectionFailed("landing window too short", f"[{t2}, {gamma.end}]")
    rep = verify_qq(gamma, qq, slack)
    if not rep.passed:
        raise RedirectionFailed("qq verification failed", str(rep.worst))
    witness = QGPath(gamma.graph, gamma.times, gamma.vertices, qq, gamma.h)
    return RedirectionCertificate(alpha, beta, r, witness, qq, t2, s1, (t2, gamma.end), slack, rep)


@dataclass(frozen=True)
class SearchResult:
    certificate: RedirectionCertificate | None
    stats: dict

    @property
    def found(self) -> bool:
        return self.certificate is not None


def _mem_cap_states() -> int:
    mb = int(os.environ.get("QRLAB_MEM_CAP_MB", "1024"))
    return max(1000, mb * 1024 * 1024 // 200)


def search_redirection(
    alpha: RaySpec, beta: RaySpec, r: Number, qq: QQ, H: Number | None = None, slack: Number | None = None,
    max_states: int | None = None, max_checks: int = 64,
) -> SearchResult:
    """Search for a walk from the end of ``alpha|_r`` to a point of ``beta`` whose tail certifies landing.

    Walks are explored in order of arrival time (arc length), keeping the
    earliest admissible arrival at each vertex.  A state ``(v, t)`` is pruned
    when it breaks either quasi-geodesic bound against an anchor subset of
    the prefix or against the basepoint.  Every candidate is fully checked
    with :func:`check_redirection`, so returned certificates are sound.
    """
    r = as_fraction(r)
    g = alpha.graph
    prefix = restrict(alpha, r).prefix
    slack = 2 * prefix.h if slack is None else as_fraction(slack)
    bpath = beta.path
    H = as_fraction(H) if H is not None else prefix.end + bpath.end
    cap = max_states or _mem_cap_states()
    q, Q = float(qq.q), float(qq.Q)
    s = float(slack)
    tol = 1e-9

    step = max(1, math.ceil(len(prefix) / 64))
    anchor_idx = sorted(set(range(0, len(prefix), step)) | {len(prefix) - 1})
    anchor_v = [prefix.vertices[i] for i in anchor_idx]
    anchor_t = np.array([float(prefix.times[i]) for i in anchor_idx])
    A = g.rows(anchor_v).astype(np.float64) / g.scale
    A[A >= _UNREACHABLE / g.scale] = np.inf
    norm = g.row(g.basepoint).astype(np.float64) / g.scale

    def admissible(v: int, t: float) -> bool:
        if not (t / q - Q - s - tol <= norm[v] <= q * t + Q + s + tol):
            return False
        d = A[:, v]
        dt = t - anchor_t
        return bool(np.all(d >= dt / q - Q - s - tol) and np.all(d <= q * dt + Q + s + tol))

    goals: dict[int, list[int]] = {}
    for j, v in enumerate(bpath.vertices):
        goals.setdefault(v, []).append(j)

    start, t0 = prefix.vertices[-1], prefix.end
    best: dict[int, Fraction] = {start: t0}
    parent: dict[int, int | None] = {start: None}
    heap = [(t0, start)]
    stats = {"nodes_expanded": 0, "pruned": 0, "goals_checked": 0, "reason": "exhausted"}
    settled: set[int] = set()
    while heap:
        t, v = heapq.heappop(heap)
        if v in settled or best.get(v) != t:
            continue
        settled.add(v)
        stats["nodes_expanded"] += 1
        if stats["nodes_expanded"] > cap:
            stats["reason"] = "memory cap exceeded"
            break
        for j in goals.get(v, ()):
            tail_len = bpath.end - bpath.times[j]
            if tail_len < W_MIN_FRACTION * (t + tail_len):
                continue
            stats["goals_checked"] += 1
            walk = []
            x = v
            while x is not None:
                walk.append(x)
                x = parent[x]
            walk.reverse()
            wt = [best[x] for x in walk]
            times = list(prefix.times) + wt[1:] + [t + bt - bpath.times[j] for bt in bpath.times[j + 1:]]
            verts = list(prefix.vertices) + walk[1:] + list(bpath.vertices[j + 1:])
            gamma = QGPath(g, tuple(times), tuple(verts), None, prefix.h)
            try:
                cert = check_redirection(alpha, beta, gamma, r, qq, slack)
            except RedirectionFailed as exc:
                stats["last_failure"] = exc.reason
                if stats["goals_checked"] >= max_checks:
                    stats["reason"] = "check budget exhausted"
                    return SearchResult(None, stats)
                continue
            stats["reason"] = "found"
            return SearchResult(cert, stats)
        for y, w in g.adj[v]:
            ty = t + Fraction(w, g.scale)
            if ty > H or y in settled:
                continue
            if y in best and best[y] <= ty:
                continue
            if not admissible(y, float(ty)):
                stats["pruned"] += 1
                continue
            best[y] = ty
            parent[y] = v
            heapq.heappush(heap, (ty, y))
    return SearchResult(None, stats)


@dataclass(frozen=True)
class ProfileRow:
    r: Fraction
    q_min: Fraction | float  # math.inf when no certificate below q_cap
    nodes_expanded: int
    verdict: str  # "certified", "none_below_cap" or "memory_cap"
    certificate: RedirectionCertificate | None = field(default=None, repr=False)


def qmin_profile(
    alpha: RaySpec, beta: RaySpec, radii: Sequence[Number], Q: Number = 0, H: Number | None = None,
    q_cap: Number = Q_CAP, resolution: Fraction = Q_RESOLUTION,
) -> list[ProfileRow]:
    """Least ``q`` (on the grid ``resolution * k``) with a certificate at each radius."""
    radii = [as_fraction(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase")
    Q = as_fraction(Q)
    lo0, hi0 = int(1 / resolution), int(as_fraction(q_cap) / resolution)
    rows = []
    for r in radii:
        nodes = 0
        top = search_redirection(alpha, beta, r, QQ(hi0 * resolution, Q), H)
        nodes += top.stats["nodes_expanded"]
        tripped = top.stats["reason"] == "memory cap exceeded"
        if not top.found:
            rows.append(ProfileRow(r, math.inf, nodes, "memory_cap" if tripped else "none_below_cap"))
            continue
        lo, hi, cert = lo0, hi0, top.certificate
        while lo < hi:
            mid = (lo + hi) // 2
            res = search_redirection(alpha, beta, r, QQ(mid * resolution, Q), H)
            nodes += res.stats["nodes_expanded"]
            tripped = tripped or res.stats["reason"] == "memory cap exceeded"
            if res.found:
                hi, cert = mid, res.certificate
            else:
                lo = mid + 1
        rows.append(ProfileRow(r, hi * resolution, nodes, "memory_cap" if tripped else "certified", cert))
    return rows


def is_growing(values: Sequence[Fraction | float]) -> bool:
    """At least three consecutive increases and a final value above twice the first."""
    if any(math.isinf(v) for v in values):
        return True
    run = best = 0
    for a, b in zip(values, values[1:]):
        run = run + 1 if b > a else 0
        best = max(best, run)
    return best >= 3 and values[-1] > 2 * values[0]


@dataclass
class ScalePartialOrder:
    names: list[str]
    radii: list[Fraction]
    Q: Fraction
    profiles: dict[tuple[str, str], list[ProfileRow]]
    verdicts: dict[tuple[str, str], str]  # "leq", "not_leq" or "unknown"

    def relation(self, a: str, b: str) -> str:
        ab, ba = self.verdicts[(a, b)], self.verdicts[(b, a)]
        if ab == "leq" and ba == "leq":
            return "equivalent"
        if ab == "leq" and ba == "not_leq":
            return "strictly_below"
        if ab == "not_leq" and ba == "leq":
            return "strictly_above"
        if ab == "not_leq" and ba == "not_leq":
            return "incomparable"
        return "unknown"


def pair_verdict(rows: Sequence[ProfileRow]) -> str:
    """``not_leq`` for a growing or capped profile, ``leq`` when every value is within twice the first."""
    values = [row.q_min for row in rows]
    if any(math.isinf(v) for v in values) or is_growing(values):
        return "not_leq"
    if values and max(values) > 2 * values[0]:
        return "unknown"
    return "leq"


def compare_classes(
    rays: dict[str, RaySpec], radii: Sequence[Number], Q: Number = 0, H: Number | None = None, q_cap: Number = Q_CAP,
) -> ScalePartialOrder:
    names = list(rays)
    profiles, verdicts = {}, {}
    for a in names:
        for b in names:
            if a == b:
                verdicts[(a, b)] = "leq"
                continue
            rows = qmin_profile(rays[a], rays[b], radii, Q, H, q_cap)
            profiles[(a, b)] = rows
            verdicts[(a, b)] = pair_verdict(rows)
    return ScalePartialOrder(names, [as_fraction(r) for r in radii], as_fraction(Q), profiles, verdicts)


def search_factory(source: RaySpec, target: RaySpec, qq: QQ, H: Number | None = None) -> Callable:
    """``r -> certificate or None`` by :func:`search_redirection` at fixed constants."""

    def make(r):
        return search_redirection(source, target, r, qq, H).certificate

    return make


def compose_certificates(cert1: RedirectionCertificate, second, qq2: QQ | None = None) -> RedirectionCertificate:
    """Transitivity: glue ``alpha -> beta`` and ``beta -> gamma`` and re-certify ``alpha -> gamma``."""
    if not callable(second):
        qq2 = second.qq
    res = _compose(cert1, second, qq2, None)
    target = res.second.target
    z = res.path
    return check_redirection(cert1.source, target, z, cert1.r, res.certificate.claimed, res.certificate.slack,
                             w_min_fraction=0)


@dataclass(frozen=True)
class Kappa:
    """Sublinear function: ``("const", c)``, ``("log", c)`` for ``c log(2 + t)``, or ``("power", c, p)``."""

    kind: str
    c: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("const", "log", "power"):
            raise ValueError(f"unknown kappa kind {self.kind}")
        if self.kind == "power" and not 0 <= self.p < 1:
            raise ValueError("power kappa needs 0 <= p < 1")

    def __call__(self, t: float) -> float:
        if self.kind == "const":
            return self.c
        if self.kind == "log":
            return self.c * math.log(2 + t)
        return self.c * t**self.p


def kappa_containment(beta: RaySpec, alpha: RaySpec, kappa: Kappa, m: float, r: Number):
    """Whether every sample of ``beta|_r`` lies within ``m * kappa(|x|)`` of ``alpha``.

    Returns ``(True, None)`` or ``(False, (time, vertex))`` for the first escape.
    """
    g = beta.graph
    prefix = restrict(beta, r).prefix
    near = g.nearest_rows(list(alpha.path.vertices))
    norm = g.row(g.basepoint)
    for t, v in zip(prefix.times, prefix.vertices):
        d = near[v] / g.scale
        if d > m * kappa(norm[v] / g.scale) + 1e-12:
            return False, (t, v)
    return True, None
