"""Words in the right-angled Artin group <a, b, c, d | [a,b], [b,c], [c,d]>.

Letters are ``a b c d`` and their inverses ``A B C D``.  ``G1 = <a, b, c>``
and ``G2 = <b, c, d>``; ``b`` is central in ``G1`` and ``c`` is central in
``G2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from qrlab.qg import QQ
from qrlab.space import MetricGraph, Number, as_fraction

ALPHABET = "aAbBcCdD"
ORDER = {x: i for i, x in enumerate(ALPHABET)}
GENERATORS = "abcd"
COMMUTE = {frozenset("ab"), frozenset("bc"), frozenset("cd")}
G1 = frozenset("abc")
G2 = frozenset("bcd")
BALL_GUARD = 12

Word = str


def inverse_letter(x: str) -> str:
    return x.swapcase()


def commutes(x: str, y: str) -> bool:
    """Letters commute when they share a generator or their generators are adjacent."""
    gx, gy = x.lower(), y.lower()
    return gx == gy or frozenset((gx, gy)) in COMMUTE


_TOKEN = re.compile(r"([abcdABCD])\s*(?:\^\s*\{?\s*(-?\d+)\s*\}?|(⁻¹))?")


def parse_word(text: str) -> Word:
    """Accepts ``aBc``, ``a b^-1 c``, ``a^3``, ``b⁻¹`` and ``1`` or ``e`` for the identity."""
    text = text.strip()
    if text in ("", "1", "e"):
        return ""
    out = []
    pos = 0
    for m in _TOKEN.finditer(text):
        gap = text[pos:m.start()]
        if gap.strip(" *·"):
            raise ValueError(f"cannot parse {gap!r} in word {text!r}")
        x, exp, sup = m.group(1), m.group(2), m.group(3)
        n = -1 if sup else int(exp) if exp is not None else 1
        out.append((x if n > 0 else inverse_letter(x)) * abs(n))
        pos = m.end()
    if text[pos:].strip(" *·"):
        raise ValueError(f"cannot parse {text[pos:]!r} in word {text!r}")
    return "".join(out)


def inverse(w: Word) -> Word:
    return "".join(inverse_letter(x) for x in reversed(w))


def power(x: str, n: int) -> Word:
    return (x if n >= 0 else inverse_letter(x)) * abs(n)


def reduce_step(reduced: list[str], x: str) -> None:
    """Append ``x`` to a reduced word in place, cancelling against an inverse it can commute past."""
    inv = inverse_letter(x)
    for j in range(len(reduced) - 1, -1, -1):
        y = reduced[j]
        if y == inv:
            del reduced[j]
            return
        if not commutes(x, y):
            break
    reduced.append(x)


def reduce_word(w: Iterable[str]) -> list[str]:
    out: list[str] = []
    for x in w:
        reduce_step(out, x)
    return out


def shortlex_least(letters: Sequence[str]) -> Word:
    """Least representative (in the order ``a < A < b < ... < D``) of a reduced word up to commutation."""
    rest = list(letters)
    out = []
    while rest:
        best = None
        for i, x in enumerate(rest):
            if all(commutes(x, rest[j]) for j in range(i)):
                if best is None or ORDER[x] < ORDER[rest[best]]:
                    best = i
        out.append(rest.pop(best))
    return "".join(out)


def normal_form(w: Word) -> Word:
    """Geodesic, shortlex-least word for the same group element."""
    return shortlex_least(reduce_word(w))


def geodesic_length(w: Word) -> int:
    return len(reduce_word(w))


def word_distance(u: Word, v: Word) -> int:
    return geodesic_length(inverse(u) + v)


def shortlex_key(w: Word) -> tuple:
    return (len(w), tuple(ORDER[x] for x in w))


class Piling:
    """Incremental reduced form: one stack per generator with ``:`` separators.

    Pushing a letter either cancels it against the top of its own stack or
    stacks it and marks every non-commuting generator.  ``len`` is the
    geodesic length of the word pushed so far.
    """

    __slots__ = ("stacks", "length")

    def __init__(self):
        self.stacks = {g: [] for g in GENERATORS}
        self.length = 0

    def push(self, x: str):
        g = x.lower()
        own = self.stacks[g]
        others = [h for h in GENERATORS if h != g and frozenset((g, h)) not in COMMUTE]
        if own and own[-1] == inverse_letter(x):
            own.pop()
            for h in others:
                self.stacks[h].pop()
            self.length -= 1
        else:
            own.append(x)
            for h in others:
                self.stacks[h].append(":")
            self.length += 1

    def __len__(self) -> int:
        return self.length


# -- Cayley balls ----------------------------------------------------------------


def _push_key(key: tuple, x: str) -> tuple:
    """Functional :class:`Piling` push on a key ``(stack_a, stack_b, stack_c, stack_d)``."""
    g = GENERATORS.index(x.lower())
    own = key[g]
    stacks = list(key)
    others = [h for h in range(4) if h != g and frozenset((GENERATORS[g], GENERATORS[h])) not in COMMUTE]
    if own and own[-1] == inverse_letter(x):
        stacks[g] = own[:-1]
        for h in others:
            stacks[h] = stacks[h][:-1]
    else:
        stacks[g] = own + x
        for h in others:
            stacks[h] = stacks[h] + ":"
    return tuple(stacks)


EMPTY_KEY = ("", "", "", "")


def element_key(w: Word) -> tuple:
    key = EMPTY_KEY
    for x in w:
        key = _push_key(key, x)
    return key


def ball_distances(R: int) -> dict[tuple, tuple[int, Word]]:
    """Breadth-first search of the Cayley graph to depth ``R``.

    Group elements are identified by their piling key; values are
    ``(distance, first word reaching the element)``.
    """
    if R > BALL_GUARD:
        raise ValueError(f"R = {R} exceeds the ball guard {BALL_GUARD}")
    dist = {EMPTY_KEY: (0, "")}
    frontier = [(EMPTY_KEY, "")]
    for depth in range(1, R + 1):
        nxt = []
        for key, w in frontier:
            for x in ALPHABET:
                k2 = _push_key(key, x)
                if k2 not in dist:
                    dist[k2] = (depth, w + x)
                    nxt.append((k2, w + x))
        frontier = nxt
    return dist


def cayley_ball(R: int) -> MetricGraph:
    """Ball of radius ``R`` in the Cayley graph; vertices are normal forms sorted shortlex."""
    if R < 0:
        raise ValueError("R must be >= 0")
    if R > BALL_GUARD:
        raise ValueError(f"R = {R} exceeds the ball guard {BALL_GUARD}")
    dist = ball_distances(R)
    keyed = sorted(((normal_form(w), key) for key, (_, w) in dist.items()), key=lambda p: shortlex_key(p[0]))
    ids = {key: i for i, (_, key) in enumerate(keyed)}
    edges = []
    for key, i in ids.items():
        for x in "abcd":
            j = ids.get(_push_key(key, x))
            if j is not None:
                edges.append((i, j, 1))
    labels = [w or "e" for w, _ in keyed]
    return MetricGraph(len(labels), edges, 0, labels, None, {"generator": "ck_ball", "R": R, "h": 1})


def ball_vertex(g: MetricGraph, w: Word) -> int:
    return g.vid(normal_form(w) or "e")


def word_path_vertices(g: MetricGraph, letters: Word, start: Word = "") -> list[int]:
    """Vertices of the letter path from ``start`` inside a Cayley ball."""
    cur = reduce_word(start)
    out = [ball_vertex(g, "".join(cur))]
    for x in letters:
        reduce_step(cur, x)
        out.append(ball_vertex(g, "".join(cur)))
    return out


# -- blocks and itineraries -------------------------------------------------------


def coset_rep(w: Word, subgroup: frozenset) -> Word:
    """Shortest representative of ``w * <subgroup>``: strip trailing letters lying in the subgroup."""
    letters = reduce_word(w)
    changed = True
    while changed:
        changed = False
        for i in range(len(letters) - 1, -1, -1):
            x = letters[i]
            if x.lower() in subgroup and all(commutes(x, y) for y in letters[i + 1:]):
                del letters[i]
                changed = True
                break
    return normal_form("".join(letters))


@dataclass(frozen=True)
class Block:
    tag: str  # "G1" or "G2"
    coset: Word  # shortest coset representative


@dataclass
class ItineraryRecord:
    blocks: list[Block]
    walls: list[Word]  # x_k: normal form of the prefix before syllable k
    syllables: list[Word]
    excursions: list[int]  # |w_k| for the syllables after the first block
    entry_times: list[int]  # u_k: letters read before entering block k
    spiral_times: list[Fraction] = field(default_factory=list)


def split_syllables(w: Word) -> list[Word]:
    """Greedy split of a word into alternating ``G1`` / ``G2`` syllables, starting with ``G1``.

    ``b`` and ``c`` stay in the current syllable; ``a`` forces ``G1`` and
    ``d`` forces ``G2``.
    """
    out = [""]
    current = G1
    for x in w:
        g = x.lower()
        if g not in current:
            current = G2 if current is G1 else G1
            out.append("")
        out[-1] += x
    return out


def itinerary(stages: Sequence[Word] | Word) -> ItineraryRecord:
    """Blocks visited by the path spelled by ``stages``.

    ``stages`` is a list of syllables alternating between ``G1`` and ``G2``
    (the first may be empty), or a single word that is split greedily.  Every
    syllable after the first must use the exclusive letter of its group
    (``a`` for ``G1``, ``d`` for ``G2``).
    """
    if isinstance(stages, str):
        stages = split_syllables(parse_word(stages))
    stages = [parse_word(s) for s in stages]
    blocks, walls, excursions, entries = [], [], [], []
    prefix = ""
    t = 0
    for k, s in enumerate(stages):
        group, tag = (G1, "G1") if k % 2 == 0 else (G2, "G2")
        letters = {x.lower() for x in s}
        if not letters <= group:
            raise ValueError(f"syllable {k} = {s!r} leaves {tag}")
        exclusive = "a" if tag == "G1" else "d"
        if k > 0 and exclusive not in {x.lower() for x in reduce_word(s)}:
            raise ValueError(f"syllable {k} = {s!r} stays in the previous block")
        x_k = normal_form(prefix)
        walls.append(x_k)
        blocks.append(Block(tag, coset_rep(x_k, group)))
        entries.append(t)
        if k > 0:
            excursions.append(geodesic_length(s))
        prefix += s
        t += len(s)
    return ItineraryRecord(blocks, walls, list(stages), excursions, entries)


# -- spiral to the b-axis ------------------------------------------------------------


@dataclass(frozen=True)
class WordReport:
    passed: bool
    qq: QQ
    slack: Fraction
    worst: tuple | None
    pairs: int
    subsampled: bool


@dataclass
class SpiralResult:
    letters: Word  # letters after the prefix b^T
    prefix: Word  # v_1 w_1 ... v_k w_k
    T: int
    stage_times: list[Fraction]  # T_0 = 2T, then T_1, T_2, ...
    times: list[Fraction]  # time of each vertex of the full letter path
    path: Word  # full letter path: prefix + b^T + letters

    def element(self, i: int) -> Word:
        return normal_form(self.path[:i])


def spiral_to_zeta(stages: Sequence[Word], T: int, tail: int | None = None) -> SpiralResult:
    """Rewriting schedule that carries ``v_1 w_1 ... v_k w_k b^T`` onto the ``b``-axis.

    ``stages`` lists ``v_1, w_1, ..., v_k, w_k`` (``v_1`` or ``w_k`` may be
    empty).  The prefix word is run over ``[0, T]`` at constant speed and
    ``b^T`` over ``[T, 2T]``; every later letter takes unit time.  At a stage
    starting at time ``tau`` with trailing power ``b^P``: append ``c^tau``,
    undo ``w b^P``, append ``b^(2 tau)``, undo ``v c^tau``.  The next stage
    starts at ``5 tau + P + |w| + |v|`` with ``P = 2 tau``.  After the last
    stage the path runs along the ``b``-axis for ``tail`` more letters
    (default: the last stage time).  Without stages the path is the
    ``b``-axis at unit speed from time 0.
    """
    stages = [parse_word(s) for s in stages]
    if len(stages) % 2:
        raise ValueError("stages must come in (v, w) pairs")
    if T < 1:
        raise ValueError("T must be >= 1")
    pairs = [(stages[i], stages[i + 1]) for i in range(0, len(stages), 2)]
    for v, w in pairs:
        if {x.lower() for x in v} - G1 or {x.lower() for x in w} - G2:
            raise ValueError("each v must lie in G1 and each w in G2")
    prefix = "".join(stages)
    letters = []
    tau, P = Fraction(2 * T), T
    stage_times = [tau]
    for v, w in reversed(pairs):
        t = int(tau)
        letters.append(power("c", t))
        letters.append(power("b", -P))
        letters.append(inverse(w))
        letters.append(power("b", 2 * t))
        letters.append(power("c", -t))
        letters.append(inverse(v))
        tau, P = 5 * tau + P + len(w) + len(v), 2 * t
        stage_times.append(tau)
    body = "".join(letters)
    tail = int(tau) if tail is None else tail
    body += power("b", tail)
    lam = len(prefix)
    path = prefix + power("b", T) + body
    if lam == 0:
        # no stages: the path is the b-axis at unit speed
        times = [Fraction(i) for i in range(len(path) + 1)]
        return SpiralResult(body, prefix, T, stage_times, times, path)
    times = [Fraction(0)]
    times += [Fraction(T * (i + 1), lam) for i in range(lam)]
    times += [Fraction(T + i + 1) for i in range(T)]
    times += [Fraction(2 * T + i + 1) for i in range(len(body))]
    return SpiralResult(body, prefix, T, stage_times, times, path)


def word_pair_distances(path: Word, idx: Sequence[int]):
    """``d(path[:i], path[:j])`` for sampled indices, via pilings started at each sample."""
    n = len(idx)
    D = [[0] * n for _ in range(n)]
    for a in range(n):
        p = Piling()
        pos = idx[a]
        for b in range(a + 1, n):
            while pos < idx[b]:
                p.push(path[pos])
                pos += 1
            D[a][b] = D[b][a] = len(p)
    return D


def _sample(n: int, cap: int) -> list[int]:
    if n <= cap:
        return list(range(n))
    return sorted({round(i * (n - 1) / (cap - 1)) for i in range(cap)})


def verify_word_path(path: Word, times: Sequence[Fraction], qq: QQ, slack: Number = 0, cap: int = 1200) -> WordReport:
    """Quasi-geodesic check of a letter path in the word metric, exact over sampled vertex pairs."""
    slack = as_fraction(slack)
    idx = _sample(len(times), cap)
    D = word_pair_distances(path, idx)
    worst = None
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            dt = times[idx[b]] - times[idx[a]]
            d = D[a][b]
            gap = max(dt / qq.q - qq.Q - slack - d, d - qq.q * dt - qq.Q - slack)
            if worst is None or gap > worst[2]:
                worst = (times[idx[a]], times[idx[b]], gap)
    n = len(idx)
    return WordReport(worst is None or worst[2] <= 0, qq, slack, worst, n * (n - 1) // 2, n < len(times))


def word_min_q(path: Word, times: Sequence[Fraction], Q: Number = 0, cap: int = 1200) -> Fraction | float:
    """Least ``q`` passing :func:`verify_word_path` at ``(q, Q)`` with zero slack."""
    Q = as_fraction(Q)
    idx = _sample(len(times), cap)
    D = word_pair_distances(path, idx)
    best = Fraction(1)
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            dt = times[idx[b]] - times[idx[a]]
            d = D[a][b]
            if d + Q == 0:
                return math.inf
            best = max(best, dt / (d + Q), (d - Q) / dt)
    return best


# -- excursions ------------------------------------------------------------------------


@dataclass(frozen=True)
class ChaseResult:
    verdict: str  # "catches" or "never_catches"
    catch_index: int | None
    budget: list[Fraction]  # t_0 = r, t_{k+1} = (1 + rho) t_k + rho |w_k|
    entry_bounds: list[Fraction] | None  # u_k >= u_0 + k rho0 when rho0 is given
    thresholds: list[Fraction]  # r (1 + rho)^k


def _lengths(source) -> list:
    if isinstance(source, ItineraryRecord):
        return list(source.excursions)
    return [as_fraction(x) if not isinstance(x, float) else x for x in source]


def chase_spiral(source, rho: Number, r: Number, rho0: Number | None = None) -> ChaseResult:
    """Whether a spiral started at radius ``r`` catches the excursions ``|w_1|, |w_2|, ...``.

    Catching happens at the first ``k`` with ``|w_k| >= r (1 + rho)^k``.
    """
    rho, r = as_fraction(rho), as_fraction(r)
    if not 0 < rho < 1 or r <= 0:
        raise ValueError("need 0 < rho < 1 and r > 0")
    lengths = _lengths(source)
    budget = [r]
    thresholds = []
    catch = None
    for k, w in enumerate(lengths, start=1):
        thr = r * (1 + rho) ** k
        thresholds.append(thr)
        budget.append((1 + rho) * budget[-1] + rho * as_fraction(w))
        if catch is None and w >= thr:
            catch = k
    entry = None
    if rho0 is not None:
        rho0 = as_fraction(rho0)
        entry = [k * rho0 for k in range(len(lengths) + 1)]
    return ChaseResult("catches" if catch else "never_catches", catch, budget, entry, thresholds)


PROBE_RHOS = (Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1))
PROBE_RS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ExcursionClass:
    label: str  # "subexponential-at-scale" or "exponential-at-scale"
    witness_rho: Fraction | None
    trace: list[float]  # log|w_i| / i
    statistic: float  # max of the trace over the second half

    @property
    def growth_rho(self) -> float:
        """Rate ``rho`` with ``|w_i| ~ (1 + rho)^i`` read off the statistic."""
        return math.exp(self.statistic) - 1


def classify_excursion(source, K: int = 64, rhos=PROBE_RHOS, rs=PROBE_RS) -> ExcursionClass:
    """Exponential at scale iff some probe ``rho`` has, for every probe ``r``, a ``k <= K`` with ``|w_k| >= r (1+rho)^k``."""
    if K < 8:
        raise ValueError("K must be >= 8")
    lengths = _lengths(source)[:K]
    if len(lengths) < K:
        raise ValueError(f"need {K} excursion lengths, got {len(lengths)}")
    trace = [math.log(float(w)) / i if w > 0 else -math.inf for i, w in enumerate(lengths, start=1)]
    stat = max(trace[K // 2:])
    witness = None
    for rho in rhos:
        if all(any(w >= r * (1 + rho) ** k for k, w in enumerate(lengths, start=1)) for r in rs):
            witness = rho
            break
    label = "exponential-at-scale" if witness is not None else "subexponential-at-scale"
    return ExcursionClass(label, witness, trace, stat)


@dataclass(frozen=True)
class Enlargement:
    lengths: list[Fraction]  # |w_1| ... |w_N|
    spikes: list[tuple[int, Fraction]]  # (k_n, rho_n)


def enlargement_family(C: Number, N: int, rhos: Sequence[Number] | None = None) -> Enlargement:
    """Lengths equal to ``C`` except spikes ``(1 + rho_n)^{k_n}`` at ``k_n``.

    ``k_n`` is the least index above ``k_{n-1}`` with
    ``(1 + rho_n)^{k_n} >= C k_n + sum_{m<n} (1 + rho_m)^{k_m}``;
    ``rho_n`` defaults to ``1 / (n + 1)``.
    """
    C = as_fraction(C)
    lengths = [C] * N
    spikes = []
    total = Fraction(0)
    k_prev = 0
    n = 0
    while True:
        rho = as_fraction(rhos[n]) if rhos is not None else Fraction(1, n + 1)
        if rhos is not None and n + 1 < len(rhos) and as_fraction(rhos[n + 1]) >= rho:
            raise ValueError("rho_n must decrease")
        k = k_prev + 1
        while (1 + rho) ** k < C * k + total:
            k += 1
            if k > N:
                break
        if k > N:
            break
        value = (1 + rho) ** k
        lengths[k - 1] = value
        spikes.append((k, rho))
        total += value
        k_prev = k
        n += 1
        if rhos is not None and n >= len(rhos):
            break
    return Enlargement(lengths, spikes)


@dataclass(frozen=True)
class SublinearReport:
    sublinear: bool
    trace: list[float]  # |w_k| / sum_{i<k} |w_i| for k = 2..K
    tail_max: float


def sublinear_excursion_check(source, K: int, threshold: float = 0.25) -> SublinearReport:
    lengths = _lengths(source)[:K]
    trace = []
    acc = lengths[0]
    for w in lengths[1:]:
        trace.append(float(w) / float(acc))
        acc += w
    tail = trace[-(K // 2):]
    m = max(tail)
    return SublinearReport(m < threshold, trace, m)
