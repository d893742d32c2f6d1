"""Locally finite weighted graphs as models of proper geodesic spaces.

Edge weights are exact rationals.  Internally every weight is multiplied by
the least common denominator so shortest paths run on integers; distances
handed back to callers are :class:`fractions.Fraction` again.
"""

from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

Number = int | Fraction

_EXACT_LIMIT = 2**53
_UNREACHABLE = np.iinfo(np.int64).max


class UnknownVertex(KeyError):
    pass


def as_fraction(x: Any) -> Fraction:
    """Parse ints, Fractions, ``"p/q"`` strings and finite decimal strings."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(1 << 20)
    return Fraction(str(x))


def fraction_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


class MetricGraph:
    """Connected, locally finite graph with positive rational edge weights.

    Vertices are the integers ``0..n-1``.  Each vertex has a string label
    (unique) and optionally a coordinate tuple.  The object is treated as
    immutable; the only mutable state is a distance-row cache guarded by a
    lock.
    """

    def __init__(
        self,
        n_vertices: int,
        edges: Iterable[tuple[int, int, Number]],
        basepoint: int = 0,
        labels: Sequence[str] | None = None,
        coords: Sequence[tuple | None] | None = None,
        meta: dict | None = None,
        truncation: Fraction | None = None,
        origin: Sequence[int] | None = None,
    ):
        if n_vertices < 1:
            raise ValueError("graph needs at least one vertex")
        if not 0 <= basepoint < n_vertices:
            raise UnknownVertex(basepoint)
        self.n = n_vertices
        self.basepoint = basepoint
        self.labels = list(labels) if labels is not None else [str(i) for i in range(n_vertices)]
        if len(self.labels) != n_vertices:
            raise ValueError("one label per vertex required")
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self.index) != n_vertices:
            raise ValueError("vertex labels must be unique")
        self.coords = list(coords) if coords is not None else None
        self.meta = dict(meta or {})
        self.truncation = truncation
        self.origin = tuple(origin) if origin is not None else None

        best: dict[tuple[int, int], Fraction] = {}
        for u, v, w in edges:
            w = as_fraction(w)
            if w <= 0:
                raise ValueError(f"edge {u}-{v} has non-positive weight {w}")
            if u == v:
                raise ValueError(f"loop at {u}")
            if not (0 <= u < n_vertices and 0 <= v < n_vertices):
                raise UnknownVertex((u, v))
            key = (u, v) if u < v else (v, u)
            if key not in best or w < best[key]:
                best[key] = w
        self.edges: list[tuple[int, int, Fraction]] = [(u, v, w) for (u, v), w in sorted(best.items())]

        scale = 1
        for _, _, w in self.edges:
            scale = scale * w.denominator // math.gcd(scale, w.denominator)
        self.scale = scale
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n_vertices)]
        for u, v, w in self.edges:
            wi = int(w * scale)
            adj[u].append((v, wi))
            adj[v].append((u, wi))
        for row in adj:
            row.sort()
        self.adj = adj

        rows = np.fromiter((u for u, _, _ in self.edges), dtype=np.int64, count=len(self.edges))
        cols = np.fromiter((v for _, v, _ in self.edges), dtype=np.int64, count=len(self.edges))
        data = np.fromiter((int(w * scale) for _, _, w in self.edges), dtype=np.float64, count=len(self.edges))
        self._csr = csr_matrix(
            (np.concatenate([data, data]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(n_vertices, n_vertices),
        )
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_rows = max(64, 20_000_000 // n_vertices)
        self._lock = threading.Lock()

    # -- basic queries -------------------------------------------------

    def __repr__(self) -> str:
        gen = self.meta.get("generator", "graph")
        return f"MetricGraph({gen}, n={self.n}, edges={len(self.edges)})"

    def vid(self, v: int | str) -> int:
        """Vertex id from an id or a label."""
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            if 0 <= v < self.n:
                return int(v)
            raise UnknownVertex(v)
        try:
            return self.index[v]
        except KeyError:
            raise UnknownVertex(v) from None

    def degree(self, v: int | str) -> int:
        return len(self.adj[self.vid(v)])

    def neighbors(self, v: int) -> list[tuple[int, Fraction]]:
        return [(y, Fraction(w, self.scale)) for y, w in self.adj[v]]

    def mesh(self) -> Fraction:
        return as_fraction(self.meta.get("h", 1))

    def is_connected(self) -> bool:
        k, _ = connected_components(self._csr, directed=False)
        return k == 1

    # -- distances -----------------------------------------------------

    def rows(self, sources: Sequence[int]) -> np.ndarray:
        """Scaled integer distance rows for ``sources`` (shape ``len x n``)."""
        out = np.empty((len(sources), self.n), dtype=np.int64)
        missing = []
        with self._lock:
            for i, s in enumerate(sources):
                row = self._cache.get(s)
                if row is None:
                    missing.append(i)
                else:
                    self._cache.move_to_end(s)
                    out[i] = row
        if missing:
            todo = sorted({int(sources[i]) for i in missing})
            for start in range(0, len(todo), 64):
                chunk = todo[start:start + 64]
                raw = dijkstra(self._csr, directed=False, indices=chunk)
                finite = np.isfinite(raw)
                if finite.any() and raw[finite].max() >= _EXACT_LIMIT:
                    raise OverflowError("scaled distances exceed exact float range")
                ints = np.where(finite, np.rint(np.where(finite, raw, 0)), 0).astype(np.int64)
                ints[~finite] = _UNREACHABLE
                with self._lock:
                    for s, row in zip(chunk, ints):
                        self._cache[s] = row
                        if len(self._cache) > self._cache_rows:
                            self._cache.popitem(last=False)
                fetched = dict(zip(chunk, ints))
                for i in missing:
                    s = int(sources[i])
                    if s in fetched:
                        out[i] = fetched[s]
        return out

    def row(self, source: int) -> np.ndarray:
        return self.rows([source])[0]

    def block(self, sources: Sequence[int], targets: Sequence[int]) -> np.ndarray:
        """Scaled distances ``sources x targets`` computed in small chunks."""
        cols = np.asarray(targets, dtype=np.int64)
        out = np.empty((len(sources), len(cols)), dtype=np.int64)
        for start in range(0, len(sources), 64):
            out[start:start + 64] = self.rows(list(sources[start:start + 64]))[:, cols]
        return out

    def nearest_rows(self, sources: Sequence[int]) -> np.ndarray:
        """Scaled distance from every vertex to the set ``sources``."""
        raw = dijkstra(self._csr, directed=False, indices=sorted(set(sources)), min_only=True)
        finite = np.isfinite(raw)
        ints = np.where(finite, np.rint(np.where(finite, raw, 0)), 0).astype(np.int64)
        ints[~finite] = _UNREACHABLE
        return ints

    def unscale(self, d: int) -> Fraction:
        if d == _UNREACHABLE:
            raise ValueError("vertices are in different components")
        return Fraction(int(d), self.scale)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        verts = []
        for i, lab in enumerate(self.labels):
            rec: dict[str, Any] = {"id": i, "label": lab}
            if self.coords is not None and self.coords[i] is not None:
                rec["coord"] = [fraction_str(as_fraction(c)) for c in self.coords[i]]
            verts.append(rec)
        meta = dict(self.meta)
        if self.truncation is not None:
            meta["truncation"] = fraction_str(self.truncation)
        return {
            "meta": meta,
            "basepoint": self.basepoint,
            "vertices": verts,
            "edges": [[u, v, w.numerator, w.denominator] for u, v, w in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricGraph":
        verts = sorted(data["vertices"], key=lambda r: r["id"])
        if [r["id"] for r in verts] != list(range(len(verts))):
            raise ValueError("vertex ids must be 0..n-1")
        labels = [r.get("label", str(r["id"])) for r in verts]
        coords = None
        if any("coord" in r for r in verts):
            coords = [tuple(Fraction(c) for c in r["coord"]) if "coord" in r else None for r in verts]
        meta = dict(data.get("meta", {}))
        trunc = meta.pop("truncation", None)
        edges = [(u, v, Fraction(num, den)) for u, v, num, den in data["edges"]]
        return cls(
            len(verts), edges, basepoint=data["basepoint"], labels=labels, coords=coords, meta=meta,
            truncation=Fraction(trunc) if trunc is not None else None,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricGraph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GeoPath:
    """Vertex sequence with cumulative arc length at each vertex."""

    vertices: tuple[int, ...]
    params: tuple[Fraction, ...]

    @property
    def length(self) -> Fraction:
        return self.params[-1]

    def __len__(self) -> int:
        return len(self.vertices)


def distance(g: MetricGraph, u: int | str, v: int | str) -> Fraction:
    u, v = g.vid(u), g.vid(v)
    if u == v:
        return Fraction(0)
    return g.unscale(int(g.row(u)[v]))


def norm(g: MetricGraph, v: int | str) -> Fraction:
    return distance(g, g.basepoint, v)


def geodesic(g: MetricGraph, u: int | str, v: int | str) -> GeoPath:
    """Shortest path from ``u`` to ``v``; ties go to the lexicographically least id sequence."""
    u, v = g.vid(u), g.vid(v)
    to_v = g.row(v)
    if to_v[u] == _UNREACHABLE:
        raise ValueError("vertices are in different components")
    verts = [u]
    params = [Fraction(0)]
    acc = 0
    x = u
    while x != v:
        for y, w in g.adj[x]:
            if to_v[y] != _UNREACHABLE and w + to_v[y] == to_v[x]:
                x = y
                acc += w
                break
        verts.append(x)
        params.append(Fraction(acc, g.scale))
    return GeoPath(tuple(verts), tuple(params))


def ball(g: MetricGraph, r: Number) -> MetricGraph:
    """Induced subgraph on ``{v : norm(v) <= r}``; records ``truncation = r``.

    Distances inside the ball can exceed ambient distances near its boundary.
    ``origin`` maps new ids back to ``g``.
    """
    r = as_fraction(r)
    if r < 0:
        raise ValueError("radius must be non-negative")
    d = g.row(g.basepoint)
    limit = r * g.scale
    keep = [i for i in range(g.n) if d[i] != _UNREACHABLE and d[i] <= limit]
    new_id = {old: new for new, old in enumerate(keep)}
    edges = [(new_id[u], new_id[v], w) for u, v, w in g.edges if u in new_id and v in new_id]
    coords = [g.coords[i] for i in keep] if g.coords is not None else None
    return MetricGraph(
        len(keep), edges, basepoint=new_id[g.basepoint], labels=[g.labels[i] for i in keep],
        coords=coords, meta=g.meta, truncation=r, origin=keep,
    )
