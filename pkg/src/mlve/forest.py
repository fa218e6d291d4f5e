"""BKAR forest interpolation: forests, two-level jungles, X and Y matrices.

Vertices are labelled 1..n.  Edges are stored as sorted tuples (a, b) with
a < b.  The Taylor forest formula is checked on explicit polynomial models
where the w-integrals can be done exactly (ordering regions keep every
min() linear, and nested Gauss-Legendre is exact on polynomials).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Forest",
    "TwoLevelJungle",
    "BlockPartition",
    "enumerate_forests",
    "spanning_trees",
    "x_matrix",
    "y_matrix",
    "PolynomialModel",
    "model_square",
    "model_product_plus_one",
    "model_random",
    "bkar_check",
    "jungle_terms",
    "jungle_term_count",
]

MAX_FOREST_N = 7


def _norm_edge(e):
    a, b = e
    if a == b:
        raise ValueError(f"self-loop edge {e}")
    return (a, b) if a < b else (b, a)


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _is_acyclic(n, edges) -> bool:
    uf = _UnionFind(range(1, n + 1))
    return all(uf.union(a, b) for a, b in edges)


@dataclass(frozen=True)
class Forest:
    """Acyclic edge set on vertices 1..n with optional w parameters."""

    n: int
    edges: frozenset
    w: tuple = ()

    def __post_init__(self):
        edges = frozenset(_norm_edge(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        for a, b in edges:
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise ValueError(f"edge ({a},{b}) outside 1..{self.n}")
        if not _is_acyclic(self.n, edges):
            raise ValueError("edge set contains a cycle")
        if self.w and len(self.w) != len(edges):
            raise ValueError("w must assign one value per edge")
        if any(not 0.0 <= float(x) <= 1.0 for x in self.w):
            raise ValueError("w values must lie in [0,1]")

    def w_map(self) -> dict:
        return dict(zip(sorted(self.edges), self.w)) if self.w else {}

    def with_w(self, w_map: dict) -> "Forest":
        return Forest(self.n, self.edges,
                      tuple(w_map[e] for e in sorted(self.edges)))

    def components(self):
        uf = _UnionFind(range(1, self.n + 1))
        for a, b in self.edges:
            uf.union(a, b)
        comps: dict = {}
        for v in range(1, self.n + 1):
            comps.setdefault(uf.find(v), []).append(v)
        return [frozenset(c) for c in comps.values()]


@dataclass(frozen=True)
class BlockPartition:
    """Connected components of a Bosonic forest."""

    blocks: tuple

    @classmethod
    def from_forest(cls, f: Forest) -> "BlockPartition":
        return cls(tuple(sorted(f.components(), key=min)))

    def block_of(self, v) -> int:
        for i, b in enumerate(self.blocks):
            if v in b:
                return i
        raise KeyError(v)


@dataclass(frozen=True)
class TwoLevelJungle:
    """Pair of forests (Bosonic, Fermionic) whose union is again a forest.

    Fermionic edges necessarily join distinct Bosonic blocks (their union
    with the Bosonic forest being acyclic forbids intra-block edges).
    """

    FB: Forest
    FF: frozenset
    w: dict = field(default_factory=dict, hash=False, compare=False)
    fermionic_slices: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        ff = frozenset(_norm_edge(e) for e in self.FF)
        object.__setattr__(self, "FF", ff)
        if ff & self.FB.edges:
            raise ValueError("Bosonic and Fermionic forests must be disjoint")
        if not _is_acyclic(self.FB.n, self.FB.edges | ff):
            raise ValueError("FB union FF must be a forest")
        blocks = BlockPartition.from_forest(self.FB)
        for a, b in ff:
            if blocks.block_of(a) == blocks.block_of(b):
                raise AssertionError("Fermionic edge inside a Bosonic block")

    @property
    def n(self) -> int:
        return self.FB.n

    @property
    def blocks(self) -> BlockPartition:
        return BlockPartition.from_forest(self.FB)

    def all_edges(self):
        return sorted(self.FB.edges) + sorted(self.FF)

    def is_spanning_tree(self) -> bool:
        return len(self.FB.edges) + len(self.FF) == self.n - 1 and \
            _is_acyclic(self.n, self.FB.edges | self.FF)


def enumerate_forests(n: int):
    """All acyclic edge sets on n labelled vertices, the empty forest included."""
    if not 1 <= n <= MAX_FOREST_N:
        raise ValueError(f"forest enumeration supports 1 <= n <= {MAX_FOREST_N}")
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    out = []

    def grow(idx, chosen):
        if idx == len(pairs):
            out.append(Forest(n, frozenset(chosen)))
            return
        grow(idx + 1, chosen)
        e = pairs[idx]
        if _is_acyclic(n, chosen + [e]):
            grow(idx + 1, chosen + [e])

    grow(0, [])
    return out


def spanning_trees(n: int):
    return [f for f in enumerate_forests(n) if len(f.edges) == n - 1]


def x_matrix(f: Forest, check_psd: bool = True) -> np.ndarray:
    """X_ab = min of w over the unique forest path a->b (1 on diagonal, 0 if
    disconnected); positive semidefinite for every w."""
    wm = f.w_map()
    if len(wm) != len(f.edges):
        raise ValueError("forest carries no w assignment")
    n = f.n
    adj: dict = {v: [] for v in range(1, n + 1)}
    for e in f.edges:
        a, b = e
        adj[a].append((b, wm[e]))
        adj[b].append((a, wm[e]))
    X = np.zeros((n, n))
    for a in range(1, n + 1):
        # DFS from a carrying the running min along the unique paths
        X[a - 1, a - 1] = 1.0
        stack = [(a, None, np.inf)]
        while stack:
            v, parent, cur = stack.pop()
            for u, wv in adj[v]:
                if u == parent:
                    continue
                m = min(cur, wv)
                X[a - 1, u - 1] = m
                stack.append((u, v, m))
    if check_psd:
        lam = np.linalg.eigvalsh(X).min()
        if lam < -1e-12:
            raise AssertionError(f"interpolated X not PSD: min eigenvalue {lam}")
    return X


def y_matrix(j: TwoLevelJungle, check_psd: bool = True) -> np.ndarray:
    """Y_BB' = min of Fermionic-edge w over the FB-union-FF path between blocks."""
    blocks = j.blocks
    nb = len(blocks.blocks)
    adj: dict = {b: [] for b in range(nb)}
    for e in sorted(j.FF):
        if e not in j.w:
            raise ValueError(f"Fermionic edge {e} has no w value")
        a, b = e
        ba, bb = blocks.block_of(a), blocks.block_of(b)
        adj[ba].append((bb, j.w[e]))
        adj[bb].append((ba, j.w[e]))
    Y = np.zeros((nb, nb), dtype=float)
    for s in range(nb):
        Y[s, s] = 1.0
        stack = [(s, None, np.inf)]
        while stack:
            v, parent, cur = stack.pop()
            for u, wv in adj[v]:
                if u == parent:
                    continue
                m = min(cur, wv)
                if m == np.inf:
                    raise AssertionError(
                        "block path without Fermionic edges is impossible")
                Y[s, u] = m
                stack.append((u, v, m))
    if check_psd:
        lam = np.linalg.eigvalsh(Y).min()
        if lam < -1e-12:
            raise AssertionError(f"interpolated Y not PSD: min eigenvalue {lam}")
    return Y


# -- polynomial models and the BKAR identity ----------------------------------

class PolynomialModel:
    """Polynomial in the pair variables x_ab, stored as {exponent tuple: coeff}.

    Variable order is the lexicographic list of pairs (a, b), a < b <= n.
    """

    def __init__(self, n: int, coeffs: dict):
        self.n = n
        self.pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
        self.coeffs = {tuple(k): float(v) for k, v in coeffs.items() if v != 0}

    def value(self, x: dict) -> float:
        xv = [x.get(p, 1.0) for p in self.pairs]
        total = 0.0
        for expo, c in self.coeffs.items():
            term = c
            for e, v in zip(expo, xv):
                term *= v ** e
            total += term
        return total

    def derivative(self, pair) -> "PolynomialModel":
        i = self.pairs.index(_norm_edge(pair))
        out: dict = {}
        for expo, c in self.coeffs.items():
            if expo[i] == 0:
                continue
            new = list(expo)
            new[i] -= 1
            key = tuple(new)
            out[key] = out.get(key, 0.0) + c * expo[i]
        return PolynomialModel(self.n, out)

    def max_degree(self) -> int:
        return max((sum(e) for e in self.coeffs), default=0)


def model_square(n: int = 2) -> PolynomialModel:
    """f = x_12^2."""
    m = PolynomialModel(n, {})
    expo = [0] * len(m.pairs)
    expo[m.pairs.index((1, 2))] = 2
    return PolynomialModel(n, {tuple(expo): 1.0})


def model_product_plus_one(n: int) -> PolynomialModel:
    """f = prod_{a<b} (1 + x_ab)."""
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    coeffs = {}
    for subset in itertools.product((0, 1), repeat=len(pairs)):
        coeffs[subset] = 1.0
    return PolynomialModel(n, coeffs)


def model_random(n: int, seed: int, deg: int = 3, nterms: int = 6) -> PolynomialModel:
    rng = np.random.default_rng(seed)
    pairs = [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]
    coeffs: dict = {}
    for _ in range(nterms):
        expo = tuple(int(rng.integers(0, deg + 1)) for _ in pairs)
        coeffs[expo] = coeffs.get(expo, 0.0) + float(rng.normal())
    return PolynomialModel(n, coeffs)


def _forest_pair_assignment(f: Forest):
    """For each pair (a,b): the minimizing edge index along the forest path.

    Within an edge-ordering region the min over a path is the lowest-ranked
    edge on it, so it suffices to know the path edge sets.  Returns a dict
    pair -> frozenset of edge positions (in sorted(f.edges)), or None when
    the pair is disconnected.
    """
    edges = sorted(f.edges)
    pos = {e: i for i, e in enumerate(edges)}
    n = f.n
    adj: dict = {v: [] for v in range(1, n + 1)}
    for e in edges:
        a, b = e
        adj[a].append((b, pos[e]))
        adj[b].append((a, pos[e]))
    paths: dict = {}
    for a in range(1, n + 1):
        stack = [(a, None, frozenset())]
        while stack:
            v, parent, path = stack.pop()
            if v > a:
                paths[(a, v)] = path
            for u, ei in adj[v]:
                if u == parent:
                    continue
                stack.append((u, v, path | {ei}))
    out = {}
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            out[(a, b)] = paths.get((a, b))
    return out


def _simplex_monomial_integral(degrees) -> float:
    """Exact integral of prod_i w_i^{d_i} over 0 <= w_0 <= ... <= w_{k-1} <= 1."""
    total = 0
    val = 1.0
    for d in degrees:
        total += d + 1
        val /= total
    return val


def bkar_check(model: PolynomialModel, n: int) -> float:
    """|direct - forest-sum| for the Taylor forest formula on a model.

    The w-integrals are exact: the cube is split into edge-ordering regions
    where every min() resolves to the lowest-ranked path edge, making the
    integrand a monomial in w with a closed-form simplex integral.
    """
    if model.n != n:
        raise ValueError("model size mismatch")
    direct = model.value({p: 1.0 for p in model.pairs})
    total = 0.0
    for f in enumerate_forests(n):
        dmodel = model
        for e in sorted(f.edges):
            dmodel = dmodel.derivative(e)
        k = len(f.edges)
        if k == 0:
            total += dmodel.value({p: 0.0 for p in model.pairs})
            continue
        pathsets = _forest_pair_assignment(f)
        for order in itertools.permutations(range(k)):
            rank = {ei: r for r, ei in enumerate(order)}
            # pair -> w slot (region rank) carrying the min, or None/one
            slot = {}
            for p, path in pathsets.items():
                if path is None:
                    slot[p] = None
                elif path:
                    slot[p] = min(rank[ei] for ei in path)
            for expo, c in dmodel.coeffs.items():
                degs = [0] * k
                dead = False
                for (p, e) in zip(model.pairs, expo):
                    if e == 0:
                        continue
                    s = slot.get(p)
                    if s is None:
                        dead = True
                        break
                    degs[s] += e
                if not dead:
                    total += c * _simplex_monomial_integral(degs)
    return abs(direct - total)


# -- two-level jungle enumeration ---------------------------------------------

def jungle_terms(n: int, j_max: int):
    """Stream every spanning two-level jungle with Fermionic slice choices.

    Yields TwoLevelJungle objects (w unassigned) whose FB union FF is a
    spanning tree; each Fermionic edge carries one slice choice in
    [0, j_max].  The attached derivative structure lists which fields each
    edge differentiates.
    """
    if n > 5 or j_max > 4:
        raise ValueError("jungle enumeration is desk-scale: n <= 5, j_max <= 4")
    for tree in spanning_trees(n):
        edges = sorted(tree.edges)
        for colors in itertools.product((0, 1), repeat=len(edges)):
            fb_edges = frozenset(e for e, c in zip(edges, colors) if c == 0)
            ff_edges = [e for e, c in zip(edges, colors) if c == 1]
            fb = Forest(n, fb_edges)
            for slices in itertools.product(range(j_max + 1),
                                            repeat=len(ff_edges)):
                jungle = TwoLevelJungle(
                    fb, frozenset(ff_edges),
                    fermionic_slices=dict(zip(ff_edges, slices)))
                yield jungle


def jungle_derivative_structure(j: TwoLevelJungle):
    """Formal term list of the interpolation derivatives of a jungle."""
    blocks = j.blocks
    out = []
    for a, b in sorted(j.FB.edges):
        out.append({"kind": "bosonic", "fields": (f"sigma_{a}", f"sigma_{b}")})
    for e in sorted(j.FF):
        a, b = e
        jj = j.fermionic_slices.get(e)
        out.append({
            "kind": "fermionic",
            "slice": jj,
            "blocks": (blocks.block_of(a), blocks.block_of(b)),
            "fields": (f"chibar^B{blocks.block_of(a)}_{jj}",
                       f"chi^B{blocks.block_of(b)}_{jj}"),
        })
    return out


def jungle_term_count(n: int, j_max: int) -> int:
    return sum(1 for _ in jungle_terms(n, j_max))


def jungles_to_jsonl(terms, path) -> None:
    """Serialize jungle terms to JSON-lines."""
    with open(path, "w") as fh:
        for j in terms:
            rec = {
                "n": j.n,
                "FB": sorted(map(list, j.FB.edges)),
                "FF": [[a, b, j.fermionic_slices.get((a, b))]
                       for a, b in sorted(j.FF)],
                "blocks": [sorted(b) for b in j.blocks.blocks],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
