"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import heapq
from fractions import Fraction


def dijkstra(n: int, edges, source: int) -> list:
    """Exact single-source distances with a binary heap over ``Fraction`` weights."""
    adj = [[] for _ in range(n)]
    for u, v, w in edges:
        w = Fraction(w)
        adj[u].append((v, w))
        adj[v].append((u, w))
    dist = [None] * n
    heap = [(Fraction(0), source)]
    while heap:
        d, x = heapq.heappop(heap)
        if dist[x] is not None:
            continue
        dist[x] = d
        for y, w in adj[x]:
            if dist[y] is None:
                heapq.heappush(heap, (d + w, y))
    return dist


def graph_dijkstra(g, source: int) -> list:
    return dijkstra(g.n, g.edges, source)


COMMUTING = {frozenset("ab"), frozenset("bc"), frozenset("cd")}


def _inv(x: str) -> str:
    return x.swapcase()


def cancel_reduce(word: str) -> str:
    """Free-partially-commutative reduction by cancelling ``x ... x^-1`` across commuting letters.

    Repeatedly deletes a pair ``x`` at ``i``, ``x^-1`` at ``j > i`` whose
    letters strictly between all commute with ``x``.  In a right-angled
    Artin group the result has geodesic length.
    """
    w = list(word)
    changed = True
    while changed:
        changed = False
        for i, x in enumerate(w):
            for j in range(i + 1, len(w)):
                y = w[j]
                if y == _inv(x):
                    del w[j]
                    del w[i]
                    changed = True
                    break
                if frozenset((x.lower(), y.lower())) not in COMMUTING:
                    break
            if changed:
                break
    return "".join(w)


def same_element(u: str, v: str) -> bool:
    return cancel_reduce(u + "".join(_inv(x) for x in reversed(v))) == ""


def pair_min_q(times, dist, Q=0):
    """One-line oracle: max over pairs of ``max(dt/(d+Q), (d-Q)/dt)``, clipped below at 1."""
    best = Fraction(1)
    n = len(times)
    for i in range(n):
        for j in range(i + 1, n):
            dt, d = times[j] - times[i], dist(i, j)
            if d + Q == 0:
                return float("inf")
            best = max(best, dt / (d + Q), (d - Q) / dt)
    return best
