"""Brute-force slice-testing expansion with sigma-Wick bookkeeping.

Applies prod_{j in J} d/dt_j to exp(V(t)) symbolically, where

    V(t) = Tr[3 lam T(t)^2 + 2i sqrt(lam) T(t) sigma
              - (1/2) log2(1 + 2i sqrt(lam) C(t) sigma)]

with log2(1+x) = log(1+x) - x, contracting each explicit sigma field by
Gaussian integration by parts right after the derivative that created it.
Potential tadpoles [R C](x,x) are split as T + [(R-1) C](x,x); all terms
carrying counterterm scalars or bare composition slots must then cancel
exactly, and the clean survivors are the minimal resolvent graphs with
their combinatorial weights.

Weights follow the coefficient-per-lambda^n convention of the order-1 and
order-2 computations: -3 at one mark, then 9 (disconnected), 18 and 12 per
lambda^2.  The per-map split inside a flip orbit depends on bookkeeping
order (flips preserve amplitudes), so only orbit-summed weights are
canonical; enumerate_minimal reduces over flip orbits by default.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

from .graphs import Corner, IFGraph, canonical_form, flip, flip_orbit

__all__ = ["enumerate_minimal", "CancellationError"]


class CancellationError(AssertionError):
    """Counterterm bookkeeping failed to cancel exactly."""


@dataclass
class _State:
    """One term of the expansion: coefficient, scalars and a graph in progress.

    Corners are stored under stable integer ids.  Slots also carry stable ids
    and own exactly two ends (corner_id, side); sigma-edges pair slot ids,
    `open_slot` marks the single pending explicit sigma insertion (None, a
    slot id, or "free" for a position-integrated standalone sigma).
    """

    re: Fraction = Fraction(1)
    im: Fraction = Fraction(0)
    slam: int = 0
    scalars: tuple = ()
    corners: dict = field(default_factory=dict)   # id -> (tag, kind, j, marked)
    slot_ends: dict = field(default_factory=dict)  # slot id -> (end, end)
    edges: dict = field(default_factory=dict)      # slot id -> slot id
    open_slot: object = None
    next_corner: int = 0
    next_slot: int = 0

    def copy(self) -> "_State":
        return _State(self.re, self.im, self.slam, self.scalars,
                      dict(self.corners), dict(self.slot_ends),
                      dict(self.edges), self.open_slot,
                      self.next_corner, self.next_slot)

    def mul_i(self, k: Fraction, power: int) -> None:
        """Multiply the coefficient by k * i^power."""
        re, im = self.re * k, self.im * k
        power %= 4
        if power == 1:
            re, im = -im, re
        elif power == 2:
            re, im = -re, -im
        elif power == 3:
            re, im = im, -re
        self.re, self.im = re, im

    def end_slot(self):
        out = {}
        for sid, ends in self.slot_ends.items():
            for e in ends:
                out[e] = sid
        return out

    def add_loop_vertex(self, deco) -> int:
        """New one-corner loop vertex; returns its slot id."""
        c = self.next_corner
        self.next_corner += 1
        self.corners[c] = deco
        sid = self.next_slot
        self.next_slot += 1
        self.slot_ends[sid] = ((c, 0), (c, 1))
        return sid

    def insert_corner_left(self, target: int, deco) -> int:
        """Insert a corner before `target`; returns the new middle slot id."""
        es = self.end_slot()
        left = es[(target, 0)]
        c = self.next_corner
        self.next_corner += 1
        self.corners[c] = deco
        ends = self.slot_ends[left]
        self.slot_ends[left] = tuple(
            (c, 0) if e == (target, 0) else e for e in ends)
        sid = self.next_slot
        self.next_slot += 1
        self.slot_ends[sid] = ((c, 1), (target, 0))
        return sid

    def pair_slots(self, a: int, b: int) -> None:
        self.edges[a] = b
        self.edges[b] = a

    def is_tadpole(self, c: int) -> bool:
        es = self.end_slot()
        s0, s1 = es[(c, 0)], es[(c, 1)]
        if s0 == s1:
            return True
        return self.edges.get(s0) == s1

    def remove_tadpole_corner(self, c: int) -> None:
        es = self.end_slot()
        s0, s1 = es[(c, 0)], es[(c, 1)]
        if s0 == s1:
            partner = self.edges.pop(s0, None)
            if partner is not None:
                del self.edges[partner]  # partner slot goes bare
            del self.slot_ends[s0]
        else:
            p0, = [e for e in self.slot_ends[s0] if e != (c, 0)]
            p1, = [e for e in self.slot_ends[s1] if e != (c, 1)]
            del self.edges[s0]
            del self.edges[s1]
            del self.slot_ends[s0]
            del self.slot_ends[s1]
            sid = self.next_slot
            self.next_slot += 1
            self.slot_ends[sid] = (p0, p1)  # bare composition slot
        del self.corners[c]


# -- canonical keys -----------------------------------------------------------

def _raw_key(st: _State):
    corner_ids = sorted(st.corners)
    cpos = {c: i for i, c in enumerate(corner_ids)}
    slots = {}
    for sid, ends in st.slot_ends.items():
        slots[sid] = tuple(sorted((cpos[c], side) for c, side in ends))
    slot_items = sorted(slots.items(), key=lambda kv: kv[1])
    spos = {sid: i for i, (sid, _) in enumerate(slot_items)}
    states = []
    for sid, ends in slot_items:
        if st.open_slot == sid:
            sstate = ("open",)
        elif sid in st.edges:
            sstate = ("edge", spos[st.edges[sid]])
        else:
            sstate = ("bare",)
        states.append((ends, sstate))
    decos = tuple(st.corners[c] for c in corner_ids)
    return (st.slam, st.scalars, "free" if st.open_slot == "free" else None,
            decos, tuple(states))


def _relabel_key(st: _State, perm, swaps):
    """Structure key after applying a corner relabeling and end swaps."""
    slots = {}
    for sid, ends in st.slot_ends.items():
        slots[sid] = tuple(sorted(
            (perm[c], side ^ swaps[c]) for c, side in ends))
    order = sorted(slots, key=lambda sid: slots[sid])
    spos = {sid: i for i, sid in enumerate(order)}
    states = []
    for sid in order:
        if st.open_slot == sid:
            sstate = ("open",)
        elif sid in st.edges:
            sstate = ("edge", spos[st.edges[sid]])
        else:
            sstate = ("bare",)
        states.append((slots[sid], sstate))
    decos = [None] * len(perm)
    for c, deco in st.corners.items():
        decos[perm[c]] = deco
    return (tuple(decos), tuple(states))


def _canonical_key(st: _State, _memo={}):
    raw = _raw_key(st)
    hit = _memo.get(raw)
    if hit is not None:
        return hit
    by_deco = {}
    for c, deco in st.corners.items():
        by_deco.setdefault(deco, []).append(c)
    classes = sorted(by_deco.values(), key=lambda cs: st.corners[cs[0]])
    es = st.end_slot()
    swappable = [c for c in st.corners if es[(c, 0)] != es[(c, 1)]]
    best = None
    for chunks in itertools.product(
            *[list(itertools.permutations(cs)) for cs in classes]):
        perm = {}
        idx = 0
        for chunk in chunks:
            for c in chunk:
                perm[c] = idx
                idx += 1
        for mask in range(1 << len(swappable)):
            swaps = {c: 0 for c in st.corners}
            for bit, c in enumerate(swappable):
                swaps[c] = (mask >> bit) & 1
            key = _relabel_key(st, perm, swaps)
            if best is None or key < best:
                best = key
    result = (st.slam, st.scalars,
              "free" if st.open_slot == "free" else None, best)
    _memo[raw] = result
    return result


# -- expansion steps ----------------------------------------------------------

def _derivative_branches(st: _State, j):
    """All terms of d/dt_j applied to the state (times exp V)."""
    out = []

    b = st.copy()                       # 6 lam T_j T(t)
    b.mul_i(Fraction(6), 0)
    b.slam += 2
    b.scalars = tuple(sorted(b.scalars + (("T", j), ("T", -1))))
    out.append(b)

    b = st.copy()                       # 2i sqrt(lam) T_j int sigma
    b.mul_i(Fraction(2), 1)
    b.slam += 1
    b.scalars = tuple(sorted(b.scalars + (("T", j),)))
    b.open_slot = "free"
    out.append(b)

    b = st.copy()                       # -i sqrt(lam) Tr[(R-1) C_j sigma]
    b.mul_i(Fraction(-1), 1)
    b.slam += 1
    sid = b.add_loop_vertex(("Rm1", "slice", j, True))
    b.open_slot = sid
    out.append(b)

    for c in sorted(st.corners):        # d/dt_j of each resolvent factor
        b = st.copy()
        b.mul_i(Fraction(-2), 1)
        b.slam += 1
        tag, kind, cj, marked = b.corners[c]
        b.corners[c] = ("R", kind, cj, marked)
        sid = b.insert_corner_left(c, ("R", "slice", j, True))
        b.open_slot = sid
        out.append(b)

    for c in sorted(st.corners):        # d/dt_j of each unmarked C(t)
        tag, kind, cj, marked = st.corners[c]
        if kind == "full":
            b = st.copy()
            b.corners[c] = (tag, "slice", j, True)
            out.append(b)

    seen_t = 0
    for idx, s in enumerate(st.scalars):  # d/dt_j of each T(t) scalar
        if s == ("T", -1):
            seen_t += 1
            b = st.copy()
            sc = list(b.scalars)
            sc[idx] = ("T", j)
            b.scalars = tuple(sorted(sc))
            out.append(b)
    return out


def _contraction_branches(st: _State):
    """Integrate the pending explicit sigma by parts against everything."""
    if st.open_slot is None:
        return [st]
    sigma = st.open_slot
    out = []

    b = st.copy()                       # against the T(t) sigma term of V
    b.mul_i(Fraction(2), 1)
    b.slam += 1
    b.scalars = tuple(sorted(b.scalars + (("T", -1),)))
    b.open_slot = None                  # slot (if any) goes bare
    out.append(b)

    b = st.copy()                       # against the log2 part of V
    b.mul_i(Fraction(-1), 1)
    b.slam += 1
    sid = b.add_loop_vertex(("Rm1", "full", None, False))
    if sigma != "free":
        b.pair_slots(sigma, sid)
    b.open_slot = None
    out.append(b)

    for c in sorted(st.corners):        # against each resolvent factor
        b = st.copy()
        b.mul_i(Fraction(-2), 1)
        b.slam += 1
        tag, kind, cj, marked = b.corners[c]
        b.corners[c] = ("R", kind, cj, marked)
        sid = b.insert_corner_left(c, ("R", "full", None, False))
        if sigma != "free":
            b.pair_slots(sigma, sid)
        b.open_slot = None
        out.append(b)
    return out


def _split_branches(st: _State):
    """Fixpoint of the potential-tadpole split [R C](x,x) = T + [(R-1)C](x,x)."""
    for c in sorted(st.corners):
        tag, kind, cj, marked = st.corners[c]
        if tag == "R" and st.is_tadpole(c):
            renorm = st.copy()
            renorm.corners[c] = ("Rm1", kind, cj, marked)
            scalar = st.copy()
            scalar.scalars = tuple(sorted(scalar.scalars + (("T", cj if cj is not None else -1),)))
            scalar.remove_tadpole_corner(c)
            return _split_branches(renorm) + _split_branches(scalar)
    return [st]


def _merge(states):
    acc = {}
    for st in states:
        key = _canonical_key(st)
        if key in acc:
            acc[key].re += st.re
            acc[key].im += st.im
        else:
            acc[key] = st
    return [st for st in acc.values() if st.re != 0 or st.im != 0]


def _is_clean(st: _State) -> bool:
    if st.scalars or st.open_slot is not None:
        return False
    return all(sid in st.edges for sid in st.slot_ends)


def _to_ifgraph(st: _State, mark_map=None) -> IFGraph:
    corner_ids = sorted(st.corners)
    cpos = {c: i for i, c in enumerate(corner_ids)}
    corners = []
    for c in corner_ids:
        tag, kind, cj, marked = st.corners[c]
        if cj is not None and mark_map is not None:
            cj = mark_map[cj]
        corners.append(Corner(kind=kind, slice_index=cj, marked=marked,
                              tag=tag))
    slots = {}
    for sid, ends in st.slot_ends.items():
        slots[sid] = frozenset((cpos[c], side) for c, side in ends)
    edges = frozenset(frozenset({slots[a], slots[b]})
                      for a, b in st.edges.items() if a < b)
    if st.im != 0:
        raise CancellationError(f"clean term with imaginary weight {st.im}")
    if st.slam != 2 * len(edges):
        raise CancellationError(
            f"clean term with sqrt-lambda power {st.slam} but {len(edges)} edges")
    return IFGraph(tuple(corners), frozenset(slots.values()), edges,
                   weight=st.re)


def _graph_to_state(g: IFGraph, re: Fraction, slam: int) -> _State:
    st = _State(re=re, im=Fraction(0), slam=slam)
    for i, c in enumerate(g.corners):
        st.corners[i] = (c.tag, c.kind, c.slice_index, c.marked)
    st.next_corner = len(g.corners)
    slot_ids = {}
    for sid, s in enumerate(sorted(tuple(sorted(s)) for s in g.slots)):
        st.slot_ends[sid] = tuple(s)
        slot_ids[frozenset(s)] = sid
    st.next_slot = len(slot_ids)
    for e in g.edges:
        a, b = [slot_ids[s] for s in e]
        st.pair_slots(a, b)
    return st


def _tadpole_edges(g: IFGraph):
    """Edges carrying a corner with both ends on their two slots.

    Flips at these edges are the counterterm-compensation symmetry used to
    group tadpole terms; flips elsewhere are value-preserving too but are
    not used by the figure-level grouping.
    """
    soe = g.slot_of_end()
    out = []
    for e in g.edges:
        slots = set(e)
        for c in range(len(g.corners)):
            if soe[(c, 0)] in slots and soe[(c, 1)] in slots:
                out.append(e)
                break
    return out


def _restricted_orbit(g: IFGraph, edge_filter):
    seen = {canonical_form(g): g}
    frontier = [g]
    while frontier:
        cur = frontier.pop()
        for edge in edge_filter(cur):
            for pairing in (1, 2):
                nxt = flip(cur, edge, pairing)
                code = canonical_form(nxt)
                if code not in seen:
                    seen[code] = nxt
                    frontier.append(nxt)
    return seen


def _pick_representative(orbit: dict) -> IFGraph:
    """The fully-traced product form: most loop vertices, then least code."""
    best_code, best = None, None
    for code, g in orbit.items():
        key = (-len(g.loop_vertices()), code)
        if best is None or key < best:
            best = key
            best_code = code
    return orbit[best_code]


def _reduce_clean_states(states, edge_filter):
    """Merge value-equal states modulo the filtered flips; keep the
    fully-traced representative of each class."""
    classes: dict = {}
    for st in states:
        g = _to_ifgraph(st)
        orbit = _restricted_orbit(g, edge_filter)
        gkey = min(orbit)
        if gkey in classes:
            rep, re, slam = classes[gkey]
            classes[gkey] = (rep, re + st.re, slam)
        else:
            classes[gkey] = (_pick_representative(orbit), st.re, st.slam)
    out = []
    for rep, re, slam in classes.values():
        if re != 0:
            out.append(_graph_to_state(rep, re, slam))
    return out


@lru_cache(maxsize=8)
def _derive(p: int):
    """Run the expansion for p formal marks 0 < 1 < ... < p-1.

    After each derivative step the counterterm structures must have
    cancelled exactly; the surviving clean states are regrouped modulo
    tadpole-edge flips onto their fully-traced representatives (the working
    form of the order-1 and order-2 computations) before the next step.
    """
    states = [_State()]
    for step in range(p):
        raw = []
        for st in states:
            for b in _derivative_branches(st, step):
                for cb in _contraction_branches(b):
                    raw.extend(_split_branches(cb))
        merged = _merge(raw)
        clean, junk = [], []
        for st in merged:
            (clean if _is_clean(st) else junk).append(st)
        if junk:
            worst = [(_canonical_key(s)[:3], s.re, s.im) for s in junk[:5]]
            raise CancellationError(
                f"{len(junk)} uncancelled counterterm structures after "
                f"mark {step}: {worst}")
        states = _reduce_clean_states(clean, _tadpole_edges)
    return tuple(states)


def enumerate_minimal(J, j_max: int, reduce: str = "figure"):
    """Minimal J-resolvent vacuum graphs with combinatorial weights.

    Weights are coefficients per power of lambda: the slice-testing term of
    a graph g is weight(g) * lambda^order(g) * (its renormalized kernel
    product, with the marked interaction factors attached).

    reduce selects the flip-grouping convention (recorded in reports):
      "figure": group modulo flips at tadpole-carrying sigma-edges, the
          grouping used for the reported order-1/order-2 weights
          (-3; then -3, 9, 18 x4, 12 x2);
      "orbit": group modulo all flips (amplitude-equivalence classes; the
          two 12-weight melonic graphs merge to one class of weight 24);
      "none": raw per-map bookkeeping output.  Per-map splits inside a flip
          orbit are bookkeeping conventions, only class sums are canonical.
    """
    if reduce not in ("figure", "orbit", "none"):
        raise ValueError(f"unknown reduction convention {reduce!r}")
    J = sorted(set(J))
    for j in J:
        if not 0 <= j <= j_max:
            raise IndexError(f"mark {j} outside [0, {j_max}]")
    if not J:
        return [IFGraph((), frozenset(), frozenset(), weight=Fraction(1))]
    mark_map = {i: j for i, j in enumerate(J)}
    graphs = [_to_ifgraph(st, mark_map) for st in _derive(len(J))]

    by_code = {}
    for g in graphs:
        code = canonical_form(g)
        if code in by_code:
            prev = by_code[code]
            by_code[code] = IFGraph(prev.corners, prev.slots, prev.edges,
                                    prev.weight + g.weight)
        else:
            by_code[code] = g
    if reduce != "orbit":
        # "figure" grouping is already baked into the derivation
        return sorted(by_code.values(),
                      key=lambda g: (g.order, canonical_form(g)))

    out = []
    remaining = dict(by_code)
    while remaining:
        code = min(remaining)
        g = remaining[code]
        orbit = flip_orbit(g)
        weight = Fraction(0)
        for ocode in orbit:
            if ocode in remaining:
                weight += remaining.pop(ocode).weight
        rep = _pick_representative(orbit)
        out.append(IFGraph(rep.corners, rep.slots, rep.edges, weight))
    return sorted(out, key=lambda g: (g.order, canonical_form(g)))
