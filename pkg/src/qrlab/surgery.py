"""Path surgeries with certified output constants.

Each surgery returns the new path together with a certificate: the claimed
constants, the slack used and the verification report (whose ``worst`` field
is the binding pair).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple

from qrlab.qg import QQ, QGPath, RaySpec, VerificationReport, restrict, verify_qq
from qrlab.space import MetricGraph, Number, as_fraction, geodesic


class SurgeryError(ValueError):
    """A surgery hypothesis does not hold on the given input."""


@dataclass(frozen=True)
class SurgeryCertificate:
    surgery: str
    claimed: QQ
    slack: Fraction
    report: VerificationReport

    @property
    def passed(self) -> bool:
        return self.report.passed


class SurgeryResult(NamedTuple):
    path: QGPath
    certificate: SurgeryCertificate


def _certify(name: str, path: QGPath, claimed: QQ, slack: Number | None) -> SurgeryResult:
    slack = 2 * path.h if slack is None else as_fraction(slack)
    out = QGPath(path.graph, path.times, path.vertices, claimed, path.h)
    return SurgeryResult(out, SurgeryCertificate(name, claimed, slack, verify_qq(out, claimed, slack)))


def _geodesic_samples(g: MetricGraph, u: int, v: int, t0: Fraction, duration: Fraction | None = None):
    """Geodesic ``u -> v`` sampled at its vertices from time ``t0``.

    Arc-length parametrized, or stretched to ``duration`` when given.
    Returns (times, vertices) including both endpoints.
    """
    gp = geodesic(g, u, v)
    if gp.length == 0:
        return [t0], [u]
    scale = Fraction(1) if duration is None else duration / gp.length
    return [t0 + s * scale for s in gp.params], list(gp.vertices)


def _qq_of(path: QGPath, qq: QQ | None) -> QQ:
    qq = qq or path.claimed
    if qq is None:
        raise ValueError("input constants are required")
    return qq


def project_and_join(x: int, beta: QGPath, qq: QQ | None = None, slack: Number | None = None) -> SurgeryResult:
    """``[x, y]`` followed by ``beta`` run backwards from ``y`` to its start.

    ``y`` is the sample of ``beta`` closest to ``x`` (earliest on ties).
    Claims ``(3q, Q)``.
    """
    qq = _qq_of(beta, qq)
    g = beta.graph
    dx = g.row(x)
    iy = min(range(len(beta)), key=lambda i: (dx[beta.vertices[i]], i))
    y = beta.vertices[iy]
    times, verts = _geodesic_samples(g, x, y, Fraction(0))
    ell, ty = times[-1], beta.times[iy]
    for j in range(iy - 1, -1, -1):
        times.append(ell + ty - beta.times[j])
        verts.append(beta.vertices[j])
    path = QGPath(g, tuple(times), tuple(verts), None, beta.h)
    return _certify("project_and_join", path, QQ(3 * qq.q, qq.Q), slack)


def redirect_to_geodesic(
    beta: RaySpec, gamma: RaySpec, r: Number, qq: QQ | None = None, fraction: Number = Fraction(1, 2),
    slack: Number | None = None,
) -> SurgeryResult:
    """Send the ``(q, Q)``-ray ``gamma`` onto the geodesic ray ``beta``, keeping ``gamma`` up to radius ``fraction * r``.

    Requires a sample of ``gamma`` within ``fraction * r`` of ``beta(r)``.  The
    output follows ``gamma`` to its sample ``p`` closest to ``beta(r)``, takes
    a geodesic to ``beta(r)`` and continues along ``beta``.  Claims ``(9q, Q)``.
    """
    r, fraction = as_fraction(r), as_fraction(fraction)
    qq = _qq_of(gamma.path, qq)
    g = beta.graph
    bpath = beta.path
    ib = next((i for i, t in enumerate(bpath.times) if t >= r), None)
    if ib is None:
        raise SurgeryError(f"beta is realized only up to {bpath.end}; increase the horizon")
    br = bpath.vertices[ib]
    drow = g.row(br)
    gp = gamma.path
    ip = min(range(len(gp)), key=lambda i: (drow[gp.vertices[i]], i))
    if g.unscale(int(drow[gp.vertices[ip]])) > fraction * r:
        raise SurgeryError("hypothesis violated: gamma stays farther than fraction*r from beta(r)")
    keep = restrict(gp, fraction * r).t_r if fraction * r > 0 else Fraction(0)
    tp = gp.times[ip]
    if tp < keep:
        ip = gp.index_at(keep)
        tp = gp.times[ip]
    times = list(gp.times[: ip + 1])
    verts = list(gp.vertices[: ip + 1])
    gt, gv = _geodesic_samples(g, gp.vertices[ip], br, tp)
    times += gt[1:]
    verts += gv[1:]
    shift = times[-1] - bpath.times[ib]
    for t, v in zip(bpath.times[ib + 1:], bpath.vertices[ib + 1:]):
        times.append(t + shift)
        verts.append(v)
    path = QGPath(g, tuple(times), tuple(verts), None, max(gp.h, bpath.h))
    return _certify("redirect_to_geodesic", path, QQ(9 * qq.q, qq.Q), slack)


def fellow_travel_splice(
    alpha: QGPath, beta: QGPath, t0: Number, C: Number, qq: QQ | None = None, slack: Number | None = None,
) -> SurgeryResult:
    """``beta`` up to ``t0``, a geodesic to ``alpha(t0)`` over ``[t0, t0 + C]``, then ``alpha`` delayed by ``C``.

    Needs ``d(alpha(t), beta(t)) <= C`` at every sample time ``t <= t0`` of
    ``beta``.  Claims ``(q, Q + C)``.
    """
    t0, C = as_fraction(t0), as_fraction(C)
    qq = _qq_of(beta, qq)
    g = beta.graph
    if t0 not in beta.times or t0 not in alpha.times:
        raise SurgeryError("t0 must be a sample time of both paths")
    for t, v in zip(beta.times, beta.vertices):
        if t > t0:
            break
        w = alpha.at(t)
        if g.unscale(int(g.row(v)[w])) > C:
            raise SurgeryError(f"fellow-travel bound violated at t={t}")
    ib = beta.times.index(t0)
    ia = alpha.times.index(t0)
    times = list(beta.times[: ib + 1])
    verts = list(beta.vertices[: ib + 1])
    u, v = beta.vertices[ib], alpha.vertices[ia]
    if u != v:
        gt, gv = _geodesic_samples(g, u, v, t0, C)
        times += gt[1:]
        verts += gv[1:]
        start = ia + 1
    else:
        start = ia + 1
        if C > 0:
            times.append(t0 + C)
            verts.append(v)
    for t, w in zip(alpha.times[start:], alpha.vertices[start:]):
        times.append(t + C)
        verts.append(w)
    path = QGPath(g, tuple(times), tuple(verts), None, max(alpha.h, beta.h))
    return _certify("fellow_travel_splice", path, QQ(qq.q, qq.Q + C), slack)


def pass_through(alpha: QGPath, x: int, t0: Number, qq: QQ | None = None, slack: Number | None = None) -> SurgeryResult:
    """Detour from ``alpha(t0)`` to a point ``x`` at distance at most 1 and back, over ``[t0, t0 + 2]``.

    ``x`` is visited at time ``t0 + 1``; afterwards the path is ``alpha``
    delayed by 2.  Claims ``(q, Q + 3)``.
    """
    t0 = as_fraction(t0)
    qq = _qq_of(alpha, qq)
    g = alpha.graph
    if t0 not in alpha.times:
        raise SurgeryError("t0 must be a sample time of alpha")
    i0 = alpha.times.index(t0)
    a0 = alpha.vertices[i0]
    if g.unscale(int(g.row(a0)[x])) > 1:
        raise SurgeryError("x is farther than 1 from alpha(t0)")
    times = list(alpha.times[: i0 + 1])
    verts = list(alpha.vertices[: i0 + 1])
    if x == a0:
        times += [t0 + 1, t0 + 2]
        verts += [a0, a0]
    else:
        gt, gv = _geodesic_samples(g, a0, x, t0, Fraction(1))
        times += gt[1:]
        verts += gv[1:]
        gt, gv = _geodesic_samples(g, x, a0, t0 + 1, Fraction(1))
        times += gt[1:]
        verts += gv[1:]
    for t, w in zip(alpha.times[i0 + 1:], alpha.vertices[i0 + 1:]):
        times.append(t + 2)
        verts.append(w)
    path = QGPath(g, tuple(times), tuple(verts), None, alpha.h)
    return _certify("pass_through", path, QQ(qq.q, qq.Q + 3), slack)


def composition_constants(qq1: QQ, qq2: QQ) -> QQ:
    return QQ(max(qq2.q + 1, qq1.q), max(qq1.Q, qq2.Q))


def least_t3(qq1: QQ, qq2: QQ, t2: Fraction, s1: Fraction) -> Fraction:
    """Least ``t3 >= t2`` satisfying both gluing inequalities."""
    q1, Q1, q2, Q2 = qq1.q, qq1.Q, qq2.q, qq2.Q
    q3 = composition_constants(qq1, qq2)
    rhs = q1 * t2 - q3.Q + Q1 + Q2
    a = (rhs + abs(s1) / q2) / (1 / q2 - 1 / q3.q)
    b = (rhs + q2 * abs(s1)) / (q3.q - q2)
    return max(t2, a, b)


@dataclass(frozen=True)
class CompositionResult:
    path: QGPath
    certificate: SurgeryCertificate
    t3: Fraction
    r_prime: Fraction
    second: object  # certificate used for the second leg
    overlap_ok: bool


def compose_redirections(cert1, cert2, qq2: QQ | None = None, slack: Number | None = None) -> CompositionResult:
    """Glue a redirection ``alpha -> beta`` with one ``beta -> gamma``.

    ``cert1`` has ``witness``, ``qq``, ``t2`` and ``s1`` with
    ``witness(t) = beta(t + s1)`` for ``t >= t2``.  ``cert2`` is either such a
    certificate for ``beta -> gamma`` or a callable taking the radius ``r'``
    and returning one (then ``qq2`` must be given).  The result is ``zeta1``
    up to the least admissible sample time ``t3`` and ``zeta2(t + s1)``
    afterwards; it claims ``(max(q2 + 1, q1), max(Q1, Q2))``.
    """
    if callable(cert2):
        if qq2 is None:
            raise ValueError("a second leg given as a factory needs qq2")
    else:
        qq2 = cert2.qq
    return _compose(cert1, cert2, qq2, slack)


def _compose(cert1, cert2, qq2: QQ, slack) -> CompositionResult:
    z1: QGPath = cert1.witness
    g = z1.graph
    beta: QGPath = cert1.target.path
    s1, t2 = as_fraction(cert1.s1), as_fraction(cert1.t2)
    qq3 = composition_constants(cert1.qq, qq2)
    bound = least_t3(cert1.qq, qq2, t2, s1)
    t3 = next((t for t in z1.times if t >= bound), None)
    if t3 is None:
        raise SurgeryError(f"no admissible t3 below the horizon (need t3 >= {float(bound):.3f})")
    # beta is followed by zeta2 up to time t3 + s1; pick r' so that zeta2 copies beta that long
    tb = t3 + s1
    norms = beta.norms()
    upto = [n for t, n in zip(beta.times, norms) if t <= tb]
    r_prime = max(upto) if upto else Fraction(0)
    if callable(cert2):
        second = cert2(r_prime)
        while second is not None and not _agrees(second.witness, beta, tb):
            r_prime += g.mesh()
            second = cert2(r_prime)
        if second is None:
            raise SurgeryError(f"no second redirection at radius {r_prime}")
    else:
        second = cert2
        if not _agrees(second.witness, beta, tb):
            raise SurgeryError("second leg does not copy beta up to t3 + s1")
    z2: QGPath = second.witness
    times = [t for t in z1.times if t <= t3]
    verts = [v for t, v in zip(z1.times, z1.vertices) if t <= t3]
    for u, v in zip(z2.times, z2.vertices):
        if u - s1 > t3:
            times.append(u - s1)
            verts.append(v)
    path = QGPath(g, tuple(times), tuple(verts), None, max(z1.h, z2.h))
    overlap_ok = all(
        v == z2.at(t + s1) for t, v in zip(z1.times, z1.vertices) if t2 <= t <= t3
    )
    res = _certify("compose_redirections", path, qq3, slack)
    return CompositionResult(res.path, res.certificate, t3, r_prime, second, overlap_ok)


def _agrees(z2: QGPath, beta: QGPath, until: Fraction) -> bool:
    """``z2`` and ``beta`` share samples up to time ``until``."""
    for t, v in zip(beta.times, beta.vertices):
        if t > until:
            return True
        if t > z2.end or z2.at(t) != v or z2.times[z2.index_at(t)] != t:
            return False
    return until <= beta.end
