"""Intermediate-field graphs as decorated combinatorial maps.

A graph is a set of corners (c-propagators), each with two ends.  Ends are
grouped in pairs into slots (the sigma-field attachment points between
consecutive corners of a loop vertex); slots are matched in pairs by
sigma-edges.  Loop vertices and their cyclic corner order are recovered by
walking corner-internal and slot adjacencies, so cyclic order is part of
graph identity, while the amplitude only sees which edge positions each
corner connects.

Slots may also be "bare" (no sigma half attached): these are plain operator
composition points and only occur in intermediate bookkeeping states of the
slice-testing expansion, never in the minimal vacuum graphs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from fractions import Fraction

__all__ = ["Corner", "IFGraph", "MarkSet", "flip", "canonical_form",
           "graphs_to_text", "graphs_from_text", "graph_to_dot"]

TAGS = ("clean", "R", "Rm1")


@dataclass(frozen=True)
class Corner:
    """One c-propagator: resolvent tag, slice content, mark, decorations."""

    kind: str = "full"          # "full" = C(t); "slice" = a single C_j
    slice_index: object = None  # slice label when kind == "slice"
    marked: bool = False
    tag: str = "R"              # "clean" | "R" | "Rm1"
    crossed: bool = False
    conj: bool = False          # conjugate resolvent (mirror copies)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown resolvent tag {self.tag!r}")
        if self.kind not in ("full", "slice"):
            raise ValueError(f"unknown corner kind {self.kind!r}")
        if self.kind == "full" and self.slice_index is not None:
            raise ValueError("full corners carry no slice index")
        if self.marked and self.kind != "slice":
            raise ValueError("marks sit on slice corners")

    def deco(self):
        return (self.kind, self.slice_index, self.marked, self.tag,
                self.crossed, self.conj)


@dataclass(frozen=True)
class MarkSet:
    """A set of distinct slice indices J within [0, j_max]."""

    J: frozenset
    j_max: int

    def __post_init__(self):
        object.__setattr__(self, "J", frozenset(self.J))
        for j in self.J:
            if not 0 <= j <= self.j_max:
                raise ValueError(f"mark {j} outside [0, {self.j_max}]")

    def sorted(self):
        return sorted(self.J)


def _end(c, side):
    return (c, side)


@dataclass(frozen=True)
class IFGraph:
    """Decorated combinatorial map with rational weight.

    slots: frozenset of frozensets of two ends (corner_index, side).
    edges: frozenset of frozensets of two slots (sigma-propagators).
    Slots not covered by an edge are bare composition points.
    """

    corners: tuple
    slots: frozenset
    edges: frozenset
    weight: Fraction = Fraction(0)

    def __post_init__(self):
        ends = [e for s in self.slots for e in s]
        want = [(c, side) for c in range(len(self.corners)) for side in (0, 1)]
        if sorted(ends) != sorted(want):
            raise ValueError("slots must partition the corner ends in pairs")
        if any(len(s) != 2 for s in self.slots):
            raise ValueError("each slot holds exactly two ends")
        seen = set()
        for e in self.edges:
            pair = tuple(e)
            if len(pair) != 2 or any(s not in self.slots for s in pair):
                raise ValueError("edges must join two distinct existing slots")
            for s in pair:
                if s in seen:
                    raise ValueError("slot matched by more than one edge")
                seen.add(s)
        marks = [c.slice_index for c in self.corners if c.marked]
        if len(marks) != len(set(marks)):
            raise ValueError("each slice mark appears on at most one corner")

    # -- structure queries ----------------------------------------------------

    @property
    def order(self) -> int:
        """Perturbative order: number of sigma-edges."""
        return len(self.edges)

    @property
    def coupling_power(self) -> int:
        return self.order

    def is_vacuum(self) -> bool:
        return len(self.edges) * 2 == len(self.slots)

    def slot_of_end(self):
        out = {}
        for s in self.slots:
            for e in s:
                out[e] = s
        return out

    def edge_of_slot(self):
        out = {}
        for e in self.edges:
            for s in e:
                out[s] = e
        return out

    def marks(self) -> frozenset:
        return frozenset(c.slice_index for c in self.corners if c.marked)

    def loop_vertices(self):
        """Cyclic corner sequences, reconstructed from the pairings."""
        soe = self.slot_of_end()
        unvisited = set(range(len(self.corners)))
        loops = []
        while unvisited:
            start = min(unvisited)
            loop = []
            c, side = start, 0
            for _ in range(2 * len(self.corners) + 1):
                loop.append(c)
                unvisited.discard(c)
                exit_end = (c, 1 - side)
                (c, side), = [e for e in soe[exit_end] if e != exit_end]
                if (c, side) == (start, 0):
                    break
            else:
                raise AssertionError("loop walk failed to close")
            loops.append(tuple(loop))
        return loops

    def components(self):
        """Connected components (corner index sets) under slot/edge adjacency."""
        eos = self.edge_of_slot()
        adj = {c: set() for c in range(len(self.corners))}
        for s in self.slots:
            cs = [c for c, _ in s]
            for a in cs:
                for b in cs:
                    adj[a].add(b)
            e = eos.get(s)
            if e:
                other = [c for slot in e for c, _ in slot]
                for a in cs:
                    adj[a].update(other)
        seen, comps = set(), []
        for c0 in range(len(self.corners)):
            if c0 in seen:
                continue
            stack, comp = [c0], set()
            while stack:
                c = stack.pop()
                if c in comp:
                    continue
                comp.add(c)
                stack.extend(adj[c] - comp)
            seen |= comp
            comps.append(frozenset(comp))
        return comps

    def is_tadpole_corner(self, c: int) -> bool:
        """Both kernel positions of corner c coincide structurally."""
        soe = self.slot_of_end()
        s0, s1 = soe[(c, 0)], soe[(c, 1)]
        if s0 == s1:
            return True
        eos = self.edge_of_slot()
        e0 = eos.get(s0)
        return e0 is not None and e0 == eos.get(s1)

    def relabel(self, perm, swaps) -> "IFGraph":
        """Apply a corner permutation (new index of old corner) and end swaps."""
        def map_end(e):
            c, side = e
            return (perm[c], side ^ (1 if swaps[c] else 0))

        corners = [None] * len(self.corners)
        for old, new in enumerate(perm):
            corners[new] = self.corners[old]
        slots = frozenset(frozenset(map_end(e) for e in s) for s in self.slots)
        edges = frozenset(
            frozenset(frozenset(map_end(e) for e in s) for s in edge)
            for edge in self.edges)
        return IFGraph(tuple(corners), slots, edges, self.weight)


def _structure_key(g: IFGraph):
    slot_list = sorted(tuple(sorted(s)) for s in g.slots)
    slot_index = {s: i for i, s in enumerate(slot_list)}
    edge_list = sorted(
        tuple(sorted(slot_index[tuple(sorted(s))] for s in e)) for e in g.edges)
    return (tuple(c.deco() for c in g.corners), tuple(slot_list),
            tuple(edge_list))


def canonical_form(g: IFGraph):
    """Canonical code: minimum structure key over decoration-preserving corner
    relabelings and end orientation swaps.  Equal codes iff isomorphic as
    decorated maps."""
    K = len(g.corners)
    by_deco = {}
    for i, c in enumerate(g.corners):
        by_deco.setdefault(c.deco(), []).append(i)
    classes = sorted(by_deco.values(), key=lambda idxs: g.corners[idxs[0]].deco())
    best = None
    class_perms = [itertools.permutations(idxs) for idxs in classes]
    for chunks in itertools.product(*[list(p) for p in class_perms]):
        perm = [0] * K
        newidx = 0
        for idxs, chunk in zip(classes, chunks):
            for old in chunk:
                perm[old] = newidx
                newidx += 1
        for mask in range(1 << K):
            swaps = [(mask >> c) & 1 for c in range(K)]
            key = _structure_key(g.relabel(perm, swaps))
            if best is None or key < best:
                best = key
    return best


def flip(g: IFGraph, edge, pairing: int) -> IFGraph:
    """Regroup the four corner ends at a sigma-edge (order-3 symmetry).

    The three pairings of the four sorted ends e0<e1<e2<e3 are arranged in
    the cyclic order ({e0e1|e2e3}, {e0e2|e1e3}, {e0e3|e1e2}); pairing k maps
    the current grouping k steps along the cycle, so pairing 0 is the
    identity and applying pairing 1 three times returns the original map.
    """
    if pairing not in (0, 1, 2):
        raise ValueError("pairing must be 0, 1 or 2")
    edge = frozenset(edge)
    if edge not in g.edges:
        raise ValueError("edge not in graph")
    if pairing == 0:
        return g
    sA, sB = sorted(edge, key=lambda s: tuple(sorted(s)))
    e0, e1, e2, e3 = sorted(sA | sB)
    cycle = [frozenset({frozenset({e0, e1}), frozenset({e2, e3})}),
             frozenset({frozenset({e0, e2}), frozenset({e1, e3})}),
             frozenset({frozenset({e0, e3}), frozenset({e1, e2})})]
    cur = frozenset({frozenset(sA), frozenset(sB)})
    pos = cycle.index(cur)
    new_pair = cycle[(pos + pairing) % 3]
    new_slots = (g.slots - edge) | new_pair
    new_edges = (g.edges - {edge}) | {new_pair}
    return IFGraph(g.corners, new_slots, new_edges, g.weight)


def flip_orbit(g: IFGraph):
    """All maps reachable by flips, keyed by canonical form."""
    seen = {canonical_form(g): g}
    frontier = [g]
    while frontier:
        cur = frontier.pop()
        for edge in cur.edges:
            for pairing in (1, 2):
                nxt = flip(cur, edge, pairing)
                code = canonical_form(nxt)
                if code not in seen:
                    seen[code] = nxt
                    frontier.append(nxt)
    return seen


# -- builders -----------------------------------------------------------------

def build_graph(corner_decos, loops, edge_slot_pairs, weight=Fraction(0)):
    """Construct an IFGraph from loop-vertex cycles.

    corner_decos: list of Corner.  loops: list of corner-index cycles.
    edge_slot_pairs: list of pairs of slot ids, a slot id being
    (loop_index, position) with the slot sitting after that position's
    corner in the cycle.
    """
    slot_by_id = {}
    for li, loop in enumerate(loops):
        k = len(loop)
        for pos in range(k):
            c_here = loop[pos]
            c_next = loop[(pos + 1) % k]
            if k == 1:
                s = frozenset({(c_here, 0), (c_here, 1)})
            else:
                s = frozenset({(c_here, 1), (c_next, 0)})
            slot_by_id[(li, pos)] = s
    slots = frozenset(slot_by_id.values())
    edges = frozenset(
        frozenset({slot_by_id[a], slot_by_id[b]}) for a, b in edge_slot_pairs)
    return IFGraph(tuple(corner_decos), slots, edges, weight)


def first_order_g1(j1=0, tag="Rm1") -> IFGraph:
    """One loop vertex of two corners with the tadpole sigma-edge."""
    corners = [Corner(kind="slice", slice_index=j1, marked=True, tag=tag),
               Corner(kind="full", tag=tag)]
    return build_graph(corners, [(0, 1)], [((0, 0), (0, 1))], Fraction(1))


def first_order_g2(j1=0, tag="Rm1") -> IFGraph:
    """Two loop vertices of length one joined by the sigma-edge."""
    corners = [Corner(kind="slice", slice_index=j1, marked=True, tag=tag),
               Corner(kind="full", tag=tag)]
    return build_graph(corners, [(0,), (1,)], [((0, 0), (1, 0))], Fraction(2))


# -- serialization ------------------------------------------------------------

def _corner_str(c: Corner) -> str:
    parts = [c.tag, c.kind if c.kind == "full" else f"j{c.slice_index}"]
    if c.marked:
        parts.append("mark")
    if c.crossed:
        parts.append("crossed")
    if c.conj:
        parts.append("conj")
    return ":".join(parts)


def _corner_from_str(s: str) -> Corner:
    parts = s.split(":")
    tag, kindpart = parts[0], parts[1]
    kind = "full" if kindpart == "full" else "slice"
    j = None if kind == "full" else int(kindpart[1:])
    return Corner(kind=kind, slice_index=j, marked="mark" in parts,
                  tag=tag, crossed="crossed" in parts, conj="conj" in parts)


def graph_to_line(g: IFGraph) -> str:
    """One-line text form: corners | loops | edges | weight."""
    soe = g.slot_of_end()
    slot_ids = {}
    loops_txt = []
    for loop in g.loop_vertices():
        loops_txt.append("(" + ",".join(str(c) for c in loop) + ")")
    slot_list = sorted(tuple(sorted(s)) for s in g.slots)
    for i, s in enumerate(slot_list):
        slot_ids[frozenset(s)] = i
    edges_txt = ";".join(
        "-".join(str(slot_ids[s]) for s in sorted(e, key=lambda s: slot_ids[s]))
        for e in sorted(g.edges, key=lambda e: min(slot_ids[s] for s in e)))
    slots_txt = ";".join(
        ",".join(f"{c}.{side}" for c, side in s) for s in slot_list)
    corners_txt = ";".join(_corner_str(c) for c in g.corners)
    return f"{corners_txt} | {slots_txt} | {edges_txt} | {g.weight}"


def graph_from_line(line: str) -> IFGraph:
    corners_txt, slots_txt, edges_txt, weight_txt = [
        p.strip() for p in line.split("|")]
    corners = tuple(_corner_from_str(s) for s in corners_txt.split(";"))
    slot_list = []
    for st in slots_txt.split(";"):
        ends = []
        for endtxt in st.split(","):
            c, side = endtxt.split(".")
            ends.append((int(c), int(side)))
        slot_list.append(frozenset(ends))
    edges = set()
    if edges_txt:
        for et in edges_txt.split(";"):
            a, b = et.split("-")
            edges.add(frozenset({slot_list[int(a)], slot_list[int(b)]}))
    return IFGraph(corners, frozenset(slot_list), frozenset(edges),
                   Fraction(weight_txt))


def graphs_to_text(graphs, path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(graph_to_line(g) + "\n")


def graphs_from_text(path):
    with open(path) as fh:
        return [graph_from_line(line) for line in fh if line.strip()]


def graph_to_dot(g: IFGraph, name="ifgraph") -> str:
    """Dot export: solid loop-vertex cycles, dashed sigma-edges."""
    lines = [f"graph {name} {{", "  node [shape=circle];"]
    for i, c in enumerate(g.corners):
        lines.append(f'  c{i} [label="{_corner_str(c)}"];')
    for loop in g.loop_vertices():
        k = len(loop)
        for pos in range(k):
            a, b = loop[pos], loop[(pos + 1) % k]
            if k > 1 or pos == 0:
                lines.append(f"  c{a} -- c{b} [style=solid];")
    slot_list = sorted(tuple(sorted(s)) for s in g.slots)
    ids = {frozenset(s): i for i, s in enumerate(slot_list)}
    for e in g.edges:
        sa, sb = sorted(e, key=lambda s: ids[s])
        ca = min(c for c, _ in sa)
        cb = min(c for c, _ in sb)
        lines.append(f"  c{ca} -- c{cb} [style=dashed,label=\"sigma\"];")
    lines.append("}")
    return "\n".join(lines)
