"""Exact finite Grassmann algebra, Berezin integrals and minor formulas.

Elements live in the algebra generated by K conjugate pairs (xbar_k, x_k).
Generators carry a fixed global order (xbar_k -> 2k, x_k -> 2k+1) and
monomials are stored as bitmasks with coefficients, so products and signs are
exact.  The Berezin integral is the iterated left derivative in the order
prod_k (dxbar_k dx_k); with that convention the integral of the full
canonically-ordered monomial xbar_1 x_1 ... xbar_K x_K equals (-1)^K and
int dxbar dx e^{-xbar x} = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GrassmannElement",
    "PairSpace",
    "berezin_integrate",
    "minor_sum",
    "wick_expectation",
]


def _mul_sign(ma: int, mb: int) -> int:
    """Parity sign for concatenating sorted monomials ma * mb."""
    sign = 1
    b = mb
    while b:
        low = b & -b
        pos = low.bit_length() - 1
        # generators of ma strictly above pos must hop over this one
        if (ma >> (pos + 1)).bit_count() & 1:
            sign = -sign
        b ^= low
    return sign


@dataclass
class GrassmannElement:
    """Sparse element: map from generator bitmask to complex coefficient."""

    n_generators: int
    terms: dict = field(default_factory=dict)

    @classmethod
    def scalar(cls, n: int, c=1.0) -> "GrassmannElement":
        return cls(n, {0: complex(c)} if c != 0 else {})

    @classmethod
    def monomial(cls, n: int, gens, c=1.0) -> "GrassmannElement":
        """Product of the listed generators in the listed order."""
        e = cls.scalar(n, c)
        for g in gens:
            e = e * cls(n, {1 << g: 1.0 + 0j})
        return e

    def __add__(self, other):
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
            if out[m] == 0:
                del out[m]
        return GrassmannElement(self.n_generators, out)

    def __sub__(self, other):
        return self + (other * (-1.0))

    def __mul__(self, other):
        if not isinstance(other, GrassmannElement):
            if other == 0:
                return GrassmannElement(self.n_generators, {})
            return GrassmannElement(
                self.n_generators, {m: c * other for m, c in self.terms.items()})
        out: dict = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                if ma & mb:
                    continue
                m = ma | mb
                c = ca * cb * _mul_sign(ma, mb)
                out[m] = out.get(m, 0.0) + c
                if out[m] == 0:
                    del out[m]
        return GrassmannElement(self.n_generators, out)

    __rmul__ = __mul__

    def derivative(self, g: int) -> "GrassmannElement":
        """Left derivative with respect to generator g."""
        out = {}
        bit = 1 << g
        for m, c in self.terms.items():
            if m & bit:
                sign = -1 if ((m & (bit - 1)).bit_count() & 1) else 1
                out[m ^ bit] = sign * c
        return GrassmannElement(self.n_generators, out)

    def is_even(self) -> bool:
        return all(m.bit_count() % 2 == 0 for m in self.terms)

    def is_odd(self) -> bool:
        return all(m.bit_count() % 2 == 1 for m in self.terms)

    def exp(self) -> "GrassmannElement":
        """exp of an even nilpotent-plus-scalar element (finite series)."""
        if not self.is_even():
            raise ValueError("exp requires an even element")
        s = complex(self.terms.get(0, 0.0))
        nil = GrassmannElement(self.n_generators, {
            m: c for m, c in self.terms.items() if m != 0})
        out = GrassmannElement.scalar(self.n_generators, 1.0)
        power = GrassmannElement.scalar(self.n_generators, 1.0)
        k = 1
        while power.terms:
            power = power * nil
            power = GrassmannElement(self.n_generators,
                                     {m: c / k for m, c in power.terms.items()})
            out = out + power
            k += 1
        return out * np.exp(s)

    def coefficient(self, mask: int) -> complex:
        return complex(self.terms.get(mask, 0.0))


class PairSpace:
    """Index bookkeeping for K conjugate pairs labelled by hashable keys."""

    def __init__(self, keys):
        self.keys = list(keys)
        self.index = {k: i for i, k in enumerate(self.keys)}
        if len(self.index) != len(self.keys):
            raise ValueError("duplicate pair keys")

    @property
    def n_pairs(self) -> int:
        return len(self.keys)

    @property
    def n_generators(self) -> int:
        return 2 * len(self.keys)

    def xbar(self, key) -> int:
        return 2 * self.index[key]

    def x(self, key) -> int:
        return 2 * self.index[key] + 1

    def one(self, c=1.0) -> GrassmannElement:
        return GrassmannElement.scalar(self.n_generators, c)

    def pair_element(self, key, weight=1.0) -> GrassmannElement:
        """-weight * xbar_key x_key (the saturating pair insertion)."""
        return GrassmannElement.monomial(
            self.n_generators, [self.xbar(key), self.x(key)], -weight)

    def quadratic(self, M: np.ndarray) -> GrassmannElement:
        """-sum_ab M_ab xbar_a x_b."""
        M = np.asarray(M)
        K = self.n_pairs
        if M.shape != (K, K):
            raise ValueError(f"covariance shape {M.shape} != ({K},{K})")
        out = GrassmannElement(self.n_generators, {})
        for a in range(K):
            for b in range(K):
                if M[a, b] != 0:
                    out = out + GrassmannElement.monomial(
                        self.n_generators, [2 * a, 2 * b + 1], -M[a, b])
        return out


def _full_mask(n_pairs: int) -> int:
    return (1 << (2 * n_pairs)) - 1


def _coupling_components(Y: np.ndarray):
    """Connected components of the pair-coupling graph of a covariance."""
    K = Y.shape[0]
    seen = [False] * K
    comps = []
    for s in range(K):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            a = stack.pop()
            comp.append(a)
            for b in range(K):
                if not seen[b] and (Y[a, b] != 0 or Y[b, a] != 0):
                    seen[b] = True
                    stack.append(b)
        comps.append(sorted(comp))
    return comps


def berezin_integrate(e: GrassmannElement, covariance: np.ndarray) -> complex:
    """Full Berezin integral of e with weight exp(-xbar Y x).

    The weight is expanded exactly (nilpotency truncates the series),
    component by component of the coupling graph, pruning intermediate terms
    that can no longer reach the full monomial.  The pair count is inferred
    from the covariance; dimensions must match e.
    """
    Y = np.asarray(covariance)
    K = Y.shape[0]
    if Y.shape != (K, K):
        raise ValueError("covariance must be square")
    if e.n_generators != 2 * K:
        raise ValueError(
            f"element has {e.n_generators} generators, covariance needs {2 * K}")
    total = e
    for comp in _coupling_components(Y):
        q = GrassmannElement(2 * K, {})
        for a in comp:
            for b in comp:
                if Y[a, b] != 0:
                    q = q + GrassmannElement.monomial(
                        2 * K, [2 * a, 2 * b + 1], -Y[a, b])
        total = total * q.exp()
        # terms missing a generator of a processed pair are dead
        comp_mask = 0
        for a in comp:
            comp_mask |= 3 << (2 * a)
        total = GrassmannElement(2 * K, {
            m: c for m, c in total.terms.items() if (m & comp_mask) == comp_mask})
        if not total.terms:
            return 0.0 + 0j
    # integral of the ascending full monomial xbar_1 x_1 ... xbar_K x_K
    return total.coefficient(_full_mask(K)) * (-1 if K % 2 else 1)


def wick_expectation(e: GrassmannElement, covariance: np.ndarray) -> complex:
    """Normalized Gaussian expectation with <x_a xbar_b> = covariance[a,b].

    This is the derivative-operator semantics of the Grassmann Gaussian
    measure (so <1> = 1 for any covariance), evaluated by recursive Wick
    pairing of each monomial.
    """
    C = np.asarray(covariance)
    memo: dict = {0: 1.0 + 0j}

    def ev(mask: int) -> complex:
        if mask in memo:
            return memo[mask]
        gens = []
        m = mask
        while m:
            low = m & -m
            gens.append(low.bit_length() - 1)
            m ^= low
        if len(gens) % 2:
            memo[mask] = 0.0
            return 0.0
        g0 = gens[0]
        total = 0.0 + 0j
        sign = -1
        for i in range(1, len(gens)):
            gi = gens[i]
            sign = -sign  # (-1)^(i-1)
            if (g0 % 2) != (gi % 2):
                if g0 % 2 == 1:  # g0 = x_a, gi = xbar_b
                    c2 = C[g0 // 2, gi // 2]
                else:  # g0 = xbar_a, gi = x_b: <xbar x> = -<x xbar>
                    c2 = -C[gi // 2, g0 // 2]
                if c2 != 0:
                    total += sign * c2 * ev(mask ^ (1 << g0) ^ (1 << gi))
        memo[mask] = total
        return total

    out = 0.0 + 0j
    for m, c in e.terms.items():
        out += c * ev(m)
    return out


def _normal_order_sign(seq) -> int:
    """Sign to sort a generator sequence (distinct ints) ascending."""
    sign = 1
    s = list(seq)
    for i in range(len(s)):
        for k in range(i + 1, len(s)):
            if s[i] > s[k]:
                sign = -sign
    return sign


def _configuration_occupancy(fermionic_edges, slice_sets, block_of):
    """Resolve a jungle configuration to per-(block, slice) pair occupancy.

    Returns (intact, edge_blocks, hardcore) where intact is the set of
    (block, slice) pairs carrying an unconsumed saturating insertion,
    edge_blocks lists (block_a, block_b, slice) per edge, and hardcore is
    False when slice sets overlap inside a block (value 0).
    """
    vertices = sorted(slice_sets)
    present: dict = {}
    for a in vertices:
        for j in slice_sets[a]:
            key = (block_of[a], j)
            if key in present:
                return None, None, False  # hardcore violation
            present[key] = a
    edge_blocks = []
    consumed = set()
    for a, b, j in fermionic_edges:
        ka, kb = (block_of[a], j), (block_of[b], j)
        if ka not in present or kb not in present or ka == kb:
            return None, None, False
        if ka in consumed or kb in consumed:
            return None, None, False
        consumed |= {ka, kb}
        edge_blocks.append((block_of[a], block_of[b], j))
    intact = set(present) - consumed
    return intact, edge_blocks, True


def configuration_element(Y, fermionic_edges, slice_sets, block_of=None,
                          n_slices=None):
    """Build the Grassmann integrand and pair covariance of a configuration.

    The integrand is prod of intact saturating pairs (-xbar^B_j x^B_j) times,
    for every Fermionic edge, the two-orientation factor
    (x^{B(a)}_j xbar^{B(b)}_j + x^{B(b)}_j xbar^{B(a)}_j).  The covariance is
    Y extended over (block, slice) pairs, block-diagonal in the slice.
    """
    Y = np.asarray(Y)
    B = Y.shape[0]
    vertices = sorted(slice_sets)
    if block_of is None:
        block_of = {a: a for a in vertices}
    if n_slices is None:
        top = [max(J) for J in slice_sets.values() if len(J)]
        top += [e[2] for e in fermionic_edges]
        n_slices = (max(top) + 1) if top else 1

    keys = [(blk, j) for blk in range(B) for j in range(n_slices)]
    space = PairSpace(keys)

    intact, edge_blocks, ok = _configuration_occupancy(
        fermionic_edges, slice_sets, block_of)
    if not ok:
        return space, GrassmannElement(space.n_generators, {}), np.eye(len(keys))

    # pairs touched by an insertion couple through Y within their slice
    # sector; untouched pairs keep their free unit weight (so they saturate
    # to 1, the "unused slice pair" normalization)
    participating = set(intact)
    for ba, bb, j in edge_blocks:
        participating |= {(ba, j), (bb, j)}
    cov = np.zeros((len(keys), len(keys)), dtype=complex)
    for i, (bi, ji) in enumerate(keys):
        for k, (bk, jk) in enumerate(keys):
            if i == k and (bi, ji) not in participating:
                cov[i, k] = 1.0
            elif ji == jk and (bi, ji) in participating and (bk, jk) in participating:
                cov[i, k] = Y[bi, bk]
    e = space.one()
    for key in sorted(intact):
        e = e * space.pair_element(key)
    for ba, bb, j in edge_blocks:
        f = (GrassmannElement.monomial(space.n_generators,
                                       [space.x((ba, j)), space.xbar((bb, j))])
             + GrassmannElement.monomial(space.n_generators,
                                         [space.x((bb, j)), space.xbar((ba, j))]))
        e = e * f
    return space, e, cov


def minor_sum(Y: np.ndarray, fermionic_edges, slice_sets, block_of=None,
              n_slices=None) -> complex:
    """Hardcore indicator times the 2^k-orientation sum of minors of Y.

    Y is the block covariance (unit diagonal, one row per Bosonic block).
    fermionic_edges is a list of (vertex_a, vertex_b, slice); slice_sets maps
    each vertex to its slice set J_a; block_of maps vertices to block indices
    (identity when omitted).  Evaluates, sector by sector in the slice index,
    the same unnormalized weight-(-xbar Y x) Berezin integral as
    berezin_integrate, but through complementary-minor determinants (Jacobi
    identity), never touching the algebra.  The sign of each orientation is
    the normal-ordering sign of its insertion monomial times the Jacobi
    complementary-minor sign (-1)^(sum of kept row/col positions); the
    convention is pinned by exact agreement with berezin_integrate.
    """
    Y = np.asarray(Y)
    B = Y.shape[0]
    if Y.shape != (B, B):
        raise ValueError("block covariance must be square")
    if not np.allclose(Y, Y.T, atol=1e-12):
        raise ValueError("block covariance must be symmetric")
    vertices = sorted(slice_sets)
    if block_of is None:
        block_of = {a: a for a in vertices}
    if n_slices is None:
        top = [max(J) for J in slice_sets.values() if len(J)]
        top += [e[2] for e in fermionic_edges]
        n_slices = (max(top) + 1) if top else 1

    intact, edge_blocks, ok = _configuration_occupancy(
        fermionic_edges, slice_sets, block_of)
    if not ok:
        return 0.0 + 0j

    k = len(edge_blocks)
    total = 0.0 + 0j
    for orient in range(1 << k):
        value = 1.0 + 0j
        for j in range(n_slices):
            # participating blocks of this sector, in ascending order; the
            # sector matrix is Y restricted to them (untouched pairs are 1)
            part = sorted({blk for blk, jj in intact if jj == j}
                          | {b for ba, bb, jj in edge_blocks if jj == j
                             for b in (ba, bb)})
            if not part:
                continue
            pos = {blk: i for i, blk in enumerate(part)}
            # insertion factors (x_{xs[i]} xbar_{xbars[i]}): intact pairs
            # (-xbar x = +x xbar) first, then oriented edges
            xs, xbars = [], []
            for blk, jj in sorted(intact):
                if jj != j:
                    continue
                xs.append(pos[blk])
                xbars.append(pos[blk])
            for idx, (ba, bb, jj) in enumerate(edge_blocks):
                if jj != j:
                    continue
                if orient >> idx & 1:
                    ba, bb = bb, ba
                xs.append(pos[ba])
                xbars.append(pos[bb])
            Ys = Y[np.ix_(part, part)]
            rows = [r for r in range(len(part)) if r not in xbars]
            cols = [c for c in range(len(part)) if c not in xs]
            det = np.linalg.det(Ys[np.ix_(rows, cols)]) if rows else 1.0 + 0j
            # I[W prod(x xbar)] = det(Ys) det[Ys^-1[xs, xbars]]; sorting the
            # two lists costs their permutation signs, then Jacobi's
            # complementary minor identity carries (-1)^(sum xs + sum xbars)
            # on sorted position sets
            sign = _normal_order_sign(xs) * _normal_order_sign(xbars)
            if (sum(xs) + sum(xbars)) % 2:
                sign = -sign
            value *= sign * det
            if value == 0:
                break
        total += value
    return total
