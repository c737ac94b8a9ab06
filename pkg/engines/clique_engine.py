# engines/clique_engine.py

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from engines.errors import BudgetExceededError
from engines.geometry_engine import NormKind, NormSpec

logger = logging.getLogger(__name__)


# =========================================================
# Integer Cell Metric on Offsets
# =========================================================
def _isqrt_floor(k):
    root = np.floor(np.sqrt(k.astype(float))).astype(np.int64)
    root -= (root * root > k)
    root += ((root + 1) * (root + 1) <= k)
    return root


def lattice_metric(delta, kind):
    """
    Cell metric for non-negative (already wrapped) per-axis offsets δ.

    0 when δ = 0, otherwise ⌊‖(δ − 1)_+‖⌋ + 1. The L2 floor is taken with an
    exact integer square root.
    """
    delta = np.asarray(delta, dtype=np.int64)
    g = np.clip(delta - 1, 0, None)
    kind = NormKind(kind)
    if kind is NormKind.LINF:
        base = g.max(axis=-1)
    elif kind is NormKind.L1:
        base = g.sum(axis=-1)
    else:
        base = _isqrt_floor((g * g).sum(axis=-1))
    return np.where(delta.any(axis=-1), base + 1, 0)


def window_offsets(dim, reach):
    """All integer offsets in [−reach, reach]^d, lexicographic order."""
    axis = np.arange(-reach, reach + 1, dtype=np.int64)
    return np.array(list(itertools.product(axis, repeat=dim)), dtype=np.int64).reshape(-1, dim)


def _lex_positive(offsets):
    keep = np.zeros(len(offsets), dtype=bool)
    for i, o in enumerate(offsets):
        nz = np.flatnonzero(o)
        keep[i] = len(nz) > 0 and o[nz[0]] > 0
    return keep


def _pairwise_ok(points, kind, s, modulus=None):
    delta = np.abs(points[:, None, :] - points[None, :, :])
    if modulus is not None:
        delta = np.minimum(delta % modulus, modulus - delta % modulus)
    return lattice_metric(delta, kind) <= s


def _lexmin_first(points):
    order = np.lexsort(points.T[::-1])
    return points[order]


# =========================================================
# Results
# =========================================================
@dataclass(frozen=True)
class CliqueSearchResult:
    size: int
    exact: bool
    nodes: int
    cliques: tuple
    upper_bound: int


# =========================================================
# Incumbent: Discrete Norm Balls
# =========================================================
def _ball_seed(kind, dim, s):
    """
    Largest pairwise-valid discrete ball S(c, ρ) = {o : ‖o − c‖ ≤ ρ},
    c ∈ {0, 1/2}^d, greedily augmented and translated so its
    lexicographically smallest member is the origin.
    """
    norm = NormSpec(kind, dim)
    window = window_offsets(dim, s + 2)
    best = None
    for center in itertools.product((0.0, 0.5), repeat=dim):
        dist = norm.of(window - np.asarray(center))
        radii = np.unique(dist)
        lo, hi = 0, len(radii) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _pairwise_ok(window[dist <= radii[mid]], kind, s).all():
                lo = mid
            else:
                hi = mid - 1
        members = window[dist <= radii[lo]]
        members = _augment(members, window, kind, s)
        if best is None or len(members) > len(best):
            best = members
    best = _lexmin_first(best)
    return best - best[0]


def _augment(members, window, kind, s):
    centroid = members.mean(axis=0)
    order = np.argsort(np.abs(window - centroid).sum(axis=1), kind="stable")
    have = {tuple(o) for o in members}
    grown = [m for m in members]
    for idx in order:
        cand = window[idx]
        if tuple(cand) in have:
            continue
        delta = np.abs(np.asarray(grown) - cand)
        if (lattice_metric(delta, kind) <= s).all():
            grown.append(cand)
            have.add(tuple(cand))
    return np.asarray(grown, dtype=np.int64)


# =========================================================
# Branch and Bound (bitset MCQ with greedy colouring)
# =========================================================
class _Stop(Exception):
    pass


class _BranchAndBound:
    """
    Maximum cliques containing a fixed anchor vertex.

    Vertices are the anchor's compatible partners; each clique found is
    reported without the anchor, and sizes include it.
    """

    def __init__(self, adjacency, upper_bound, node_cap, enumerate_all, incumbent=None):
        self.adj = adjacency
        self.upper_bound = upper_bound
        self.node_cap = node_cap
        self.enumerate_all = enumerate_all
        self.nodes = 0
        self.best = 1
        self.found = [[]]
        if incumbent is not None:
            self.best = len(incumbent) + 1
            self.found = [list(incumbent)]

    def _colour(self, cand):
        order, colours = [], []
        colour = 0
        uncoloured = cand
        while uncoloured:
            colour += 1
            q = uncoloured
            while q:
                low = q & -q
                v = low.bit_length() - 1
                q &= ~low
                q &= ~self.adj[v]
                uncoloured &= ~low
                order.append(v)
                colours.append(colour)
        return order, colours

    def _prunes(self, size, colour):
        bound = 1 + size + colour
        return bound < self.best if self.enumerate_all else bound <= self.best

    def _record(self, clique):
        size = len(clique) + 1
        if size > self.best:
            self.best = size
            self.found = [list(clique)]
            if size >= self.upper_bound and not self.enumerate_all:
                raise _Stop
        elif size == self.best and self.enumerate_all:
            self.found.append(list(clique))

    def run(self):
        """Returns True when the search finished (exact), False when capped."""
        everything = 0
        for v in range(len(self.adj)):
            everything |= 1 << v
        if self.best >= self.upper_bound and not self.enumerate_all:
            return True
        if everything == 0:
            return True

        clique = []
        order, colours = self._colour(everything)
        stack = [[everything, order, colours, len(order) - 1, None]]
        self.nodes = 1
        try:
            while stack:
                frame = stack[-1]
                cand, order, colours, i, _ = frame
                if i < 0 or self._prunes(len(clique), colours[i]):
                    stack.pop()
                    v = frame[4]
                    if v is not None:
                        clique.pop()
                        parent = stack[-1]
                        parent[0] &= ~(1 << v)
                        parent[3] -= 1
                    continue
                v = order[i]
                new_cand = cand & self.adj[v]
                clique.append(v)
                if new_cand == 0:
                    self._record(clique)
                    clique.pop()
                    frame[0] = cand & ~(1 << v)
                    frame[3] -= 1
                    continue
                self.nodes += 1
                if self.nodes > self.node_cap:
                    return False
                sub_order, sub_colours = self._colour(new_cand)
                stack.append([new_cand, sub_order, sub_colours, len(sub_order) - 1, v])
        except _Stop:
            pass
        return True


def _adjacency(vertices, kind, s, modulus=None):
    ok = _pairwise_ok(vertices, kind, s, modulus)
    np.fill_diagonal(ok, False)
    adj = []
    for row in ok:
        bits = 0
        for j in np.flatnonzero(row):
            bits |= 1 << int(j)
        adj.append(bits)
    return adj


def _solve(vertices, kind, s, upper_bound, node_cap, enumerate_all, incumbent_rows=None, modulus=None):
    degree = _pairwise_ok(vertices, kind, s, modulus).sum(axis=1) if len(vertices) else np.zeros(0)
    relabel = np.argsort(-degree, kind="stable")
    vertices = vertices[relabel]
    incumbent = None
    if incumbent_rows is not None:
        position = {int(old): new for new, old in enumerate(relabel)}
        incumbent = [position[int(row)] for row in incumbent_rows]
    solver = _BranchAndBound(_adjacency(vertices, kind, s, modulus), upper_bound, node_cap, enumerate_all, incumbent)
    finished = solver.run() if node_cap > 0 else solver.best >= upper_bound
    cliques = sorted({
        tuple(sorted([(0,) * vertices.shape[1]] + [tuple(int(c) for c in vertices[v]) for v in found]))
        for found in solver.found
    })
    cliques = tuple(cliques)
    exact = bool(finished or solver.best >= upper_bound)
    return CliqueSearchResult(solver.best, exact, solver.nodes, cliques, upper_bound)


# =========================================================
# Public Searches
# =========================================================
@lru_cache(maxsize=64)
def search_window(kind, dim, s, node_cap, enumerate_all=False):
    """
    Maximum clique sets of the s-graded metric on Z^d, anchored at the origin.

    The origin is the lexicographically smallest member, so candidates are the
    lexicographically positive offsets within metric distance s. Every
    diameter-≤s set has per-axis offsets ≤ s, so the window [−(s+1), s+1]^d
    holds all of them; (s+1)^d is a universal upper bound.
    """
    kind = NormKind(kind)
    upper_bound = (s + 1) ** dim

    if kind is NormKind.LINF and enumerate_all:
        # pairwise offsets ≤ s per axis force a full (s+1)^d box
        box = window_offsets(dim, s)
        box = box[(box >= 0).all(axis=1)]
        clique = tuple(sorted(tuple(int(c) for c in row) for row in box))
        return CliqueSearchResult(upper_bound, True, 0, (clique,), upper_bound)

    offsets = window_offsets(dim, s + 1)
    near = lattice_metric(np.abs(offsets), kind) <= s
    vertices = offsets[near & _lex_positive(offsets)]

    seed = _ball_seed(kind, dim, s)
    index = {tuple(int(c) for c in v): i for i, v in enumerate(vertices)}
    seed_rows = [index[tuple(int(c) for c in o)] for o in seed[1:]]

    result = _solve(vertices, kind, s, upper_bound, node_cap, enumerate_all, seed_rows)
    logger.info(
        "✅ clique search %s d=%d s=%d: size=%d exact=%s nodes=%d",
        kind.value, dim, s, result.size, result.exact, result.nodes,
    )
    return result


@lru_cache(maxsize=64)
def search_torus(kind, dim, s, m, node_cap, enumerate_all=True):
    """
    Maximum clique sets containing cell 0 on a torus too small for the
    window argument (m < 2s + 3); cells are enumerated explicitly.
    """
    kind = NormKind(kind)
    cells = window_offsets(dim, m)
    cells = np.unique(cells % m, axis=0)
    delta = np.minimum(cells % m, m - cells % m)
    near = (lattice_metric(delta, kind) <= s) & cells.any(axis=1)
    vertices = cells[near]
    upper_bound = min((s + 1) ** dim, m**dim)
    result = _solve(vertices, kind, s, upper_bound, node_cap, enumerate_all, None, modulus=m)
    if not result.exact:
        raise BudgetExceededError(f"torus clique search for m={m} exceeded {node_cap} nodes")
    return result
