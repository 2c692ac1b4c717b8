"""Exploration interface, explored sub-domains, connection patterns."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numba import njit

from .lattice import (BoundaryMarking, Corner, Edge, Region, UnionFind, Vertex,
                      dual_config, dual_edge, make_edge)


@dataclass
class MedialPath:
    """Directed medial edges, each stored as its corner (left primal, right dual).

    ``states[k]`` is the state (True = open) of the edge at the far end of
    step k, known once step k+1 exists.
    """

    steps: list[Corner]
    states: list[bool]
    exit_index: int | None
    marking: BoundaryMarking = field(repr=False)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def exit_step(self) -> int:
        return len(self.steps) - 1

    def midpoint_in(self, k: int) -> Vertex:
        return self.steps[k].midpoints()[0]

    def midpoint_out(self, k: int) -> Vertex:
        return self.steps[k].midpoints()[1]

    def edge_out(self, k: int) -> Edge:
        c = self.steps[k]
        m = self.midpoint_out(k)
        return make_edge(c.primal, (2 * m[0] - c.primal[0], 2 * m[1] - c.primal[1]))

    def revealed(self, t: int) -> tuple[frozenset, frozenset]:
        """(open, closed) permitted edges revealed by the prefix gamma[0..t]."""
        region = self.marking.region
        permitted = region.edge_index
        opened, closed = set(), set()
        for k in range(min(t, len(self.steps) - 1)):
            e = self.edge_out(k)
            if e in permitted:
                (opened if self.states[k] else closed).add(e)
        return frozenset(opened), frozenset(closed)

    @property
    def revealed_open(self) -> frozenset:
        return self.revealed(len(self.steps))[0]

    @property
    def revealed_dual(self) -> frozenset:
        return frozenset(dual_edge(e) for e in self.revealed(len(self.steps))[1])

    def turns(self) -> list[int]:
        """+1 for a left turn, -1 for a right turn, between consecutive steps."""
        out = []
        for k in range(len(self.steps) - 1):
            a, b = self.steps[k].midpoints()
            _, c = self.steps[k + 1].midpoints()
            d1 = (b[0] - a[0], b[1] - a[1])
            d2 = (c[0] - b[0], c[1] - b[1])
            out.append(1 if d1[0] * d2[1] - d1[1] * d2[0] > 0 else -1)
        return out

    def to_json(self) -> str:
        return json.dumps([[c.primal[0] + c.dual[0], c.primal[1] + c.dual[1]] for c in self.steps])

    def points(self, mesh: float | None = None) -> np.ndarray:
        """Medial vertices visited, as complex positions in the domain's frame."""
        dom = self.marking.domain
        mesh = dom.mesh if mesh is None else mesh
        x0 = min(p[0] for p in dom.boundary_loop)
        y0 = min(p[1] for p in dom.boundary_loop)
        mids = [self.midpoint_in(0)] + [self.midpoint_out(k) for k in range(len(self.steps))]
        arr = np.array(mids, dtype=float)
        return ((arr[:, 0] - x0) + 1j * (arr[:, 1] - y0)) * (mesh / 2.0)


def _bond_lookup(marking: BoundaryMarking, bonds):
    region = marking.region
    if isinstance(bonds, np.ndarray):
        P = region.permitted_edges
        return frozenset(P[i] for i in np.flatnonzero(bonds))
    return region.check_bonds(bonds)


def start_corner(marking: BoundaryMarking) -> Corner:
    dom = marking.domain
    L = len(dom.boundary_loop)
    k = (marking.offsets[0] - 1) % L
    cross = dom.crossing_edges[k]
    V = dom.primal_vertices
    outside = cross[0] if cross[0] not in V else cross[1]
    c = Corner(outside, marking.marked_points[0])
    if c.midpoints()[1] != ((cross[0][0] + cross[1][0]) // 2, (cross[0][1] + cross[1][1]) // 2):
        raise ValueError("no valid initial medial edge for this marking")
    return c


def trace_interface(marking: BoundaryMarking, bonds, max_steps: int | None = None) -> MedialPath:
    """Follow the interface from b1 until it leaves the domain at an even b_i."""
    region = marking.region
    V = region.vertices
    open_set = _bond_lookup(marking, bonds)
    permitted = region.edge_index
    marks = {b: i + 1 for i, b in enumerate(marking.marked_points)}
    if max_steps is None:
        max_steps = 8 * (len(region.incident_edges) + len(marking.domain.boundary_loop)) + 16

    c = start_corner(marking)
    steps, states = [c], []
    exit_index = None
    for _ in range(max_steps):
        u, w = c.primal, c.dual
        m = c.midpoints()[1]
        v = (2 * m[0] - u[0], 2 * m[1] - u[1])
        e = make_edge(u, v)
        if e in permitted:
            is_open = e in open_set
        elif u in V or v in V:
            is_open = False   # free crossing edge
        else:
            is_open = True    # exterior edge, wired
        if is_open:
            c = Corner(v, w)
        else:
            c = Corner(u, (2 * m[0] - w[0], 2 * m[1] - w[1]))
        steps.append(c)
        states.append(is_open)
        if c.primal not in V and c.dual in marks:
            i = marks[c.dual]
            if i % 2:
                raise RuntimeError(f"interface reached odd marked point b{i} from outside")
            exit_index = i
            break
    else:
        raise RuntimeError("interface did not terminate")
    return MedialPath(steps, states, exit_index, marking)


@dataclass
class TracerSnapshot:
    time: int
    region: Region
    removed: frozenset
    components: list

    @property
    def sub_domain(self) -> list:
        return self.components


def snapshot(path: MedialPath, t: int) -> TracerSnapshot:
    """Explored domain Omega_t with its induced boundary conditions."""
    marking = path.marking
    base = marking.region
    opened, closed = path.revealed(t)
    removed = frozenset(v for e in opened for v in e if v in base.vertices)
    V_t = base.vertices - removed
    free = set()
    for e in marking.free_crossing | closed:
        if (e[0] in V_t) or (e[1] in V_t):
            if e in closed and e[0] in V_t and e[1] in V_t:
                raise RuntimeError(f"revealed closed edge {e} inside the explored domain")
            free.add(e)
    region = Region(frozenset(V_t), frozenset(free))
    return TracerSnapshot(t, region, removed, region.components())


def _diag_primal(b: Vertex) -> list[Vertex]:
    x, y = b
    return [(x + 1, y + 1), (x - 1, y + 1), (x - 1, y - 1), (x + 1, y - 1)]


def loop_positions(marking: BoundaryMarking) -> dict:
    """Position of each boundary-loop dual vertex counted counterclockwise from b1."""
    loop = marking.domain.boundary_loop
    L = len(loop)
    o1 = marking.offsets[0]
    return {w: (i - o1) % L for i, w in enumerate(loop)}


def contact_times(path: MedialPath) -> list[tuple[int, int]]:
    """(t, s) for every step t >= 1 whose right-hand dual vertex lies on the loop at position s.

    Such a step has joined b1 to the boundary at s, either by revealed dual
    edges on its right or by revealed open edges on its left.
    """
    pos = loop_positions(path.marking)
    return [(t, pos[c.dual]) for t, c in enumerate(path.steps) if t >= 1 and c.dual in pos]


@dataclass
class DisconnectionSplit:
    tau: int
    J: int
    contact: int                # loop position where the separating contact occurs
    right: list                 # components on the side of b2..bJ
    left: list                  # components on the side of b(J+1)..b2n
    snapshot: TracerSnapshot


def component_sides(marking: BoundaryMarking, components, contact: int,
                    earlier: Iterable[int] = ()) -> tuple[list, list, list]:
    """Split components by which side of the contact point they touch the loop on.

    Earlier contacts cut off pockets; only the loop stretches between the
    neighbouring contacts count.
    """
    pos = loop_positions(marking)
    L = len(marking.domain.boundary_loop)
    earlier = set(earlier)
    lo = max([c for c in earlier if c < contact], default=0)
    hi = min([c for c in earlier if c > contact], default=L)
    right, left, other = [], [], []
    for C in components:
        touched = {pos[w] for v in C for w in _diag_primal(v) if w in pos}
        r = any(lo < s < contact for s in touched)
        l = any(contact < s < hi for s in touched)
        if r and l:
            raise RuntimeError("component touches both sides of the exploration path")
        (right if r else left if l else other).append(C)
    return right, left, other


def disconnection_split(path: MedialPath) -> DisconnectionSplit | None:
    """First contact of the path with the loop strictly between b2 and b2n, or None."""
    marking = path.marking
    if marking.n < 2:
        return None
    L = len(marking.domain.boundary_loop)
    o1 = marking.offsets[0]
    rel = [(o - o1) % L for o in marking.offsets]
    seen = []
    for t, s in contact_times(path):
        if rel[1] <= s < rel[-1]:
            J = max(j + 1 for j in range(len(rel)) if rel[j] <= s)
            snap = snapshot(path, t)
            right, left, _ = component_sides(marking, snap.components, s, seen)
            return DisconnectionSplit(t, J, s, right, left, snap)
        seen.append(s)
    return None


@dataclass(frozen=True)
class ConnectionPattern:
    blocks: tuple[frozenset, ...]
    n_arcs: int

    @property
    def rgs(self) -> str:
        label = [0] * self.n_arcs
        order = sorted(self.blocks, key=min)
        for j, blk in enumerate(order):
            for a in blk:
                label[a] = j
        return "".join(str(x) for x in label)


def connection_pattern(marking: BoundaryMarking, bonds) -> ConnectionPattern:
    """Partition of the wired arcs by open paths inside the domain.

    Wired arc j (0-based) is arc beta_{2j+2}.
    """
    region = marking.region
    bonds = _bond_lookup(marking, bonds)
    V = region.vertices
    arc_of = {}
    for j in range(marking.n):
        for e in marking.arc_crossing_edges(2 * j + 1):
            arc_of[e] = ("arc", j)
    uf = UnionFind(V)
    for j in range(marking.n):
        uf.add(("arc", j))
    for e in bonds:
        if e in arc_of:
            inside = e[0] if e[0] in V else e[1]
            uf.union(inside, arc_of[e])
        else:
            uf.union(*e)
    blocks: dict = {}
    for j in range(marking.n):
        blocks.setdefault(uf.find(("arc", j)), set()).add(j)
    return ConnectionPattern(tuple(frozenset(b) for b in blocks.values()), marking.n)


@njit(cache=True)
def _pattern_labels(masks, pa, pb, n_nodes, arc_nodes):
    n_cfg, m = masks.shape
    k = len(arc_nodes)
    out = np.empty((n_cfg, k), dtype=np.int64)
    parent = np.empty(n_nodes, dtype=np.int64)
    for c in range(n_cfg):
        for v in range(n_nodes):
            parent[v] = v
        for e in range(m):
            if masks[c, e]:
                ra = pa[e]
                while parent[ra] != ra:
                    parent[ra] = parent[parent[ra]]
                    ra = parent[ra]
                rb = pb[e]
                while parent[rb] != rb:
                    parent[rb] = parent[parent[rb]]
                    rb = parent[rb]
                if ra != rb:
                    parent[rb] = ra
        roots = np.empty(k, dtype=np.int64)
        for j in range(k):
            r = arc_nodes[j]
            while parent[r] != r:
                r = parent[r]
            roots[j] = r
        nxt = 0
        for j in range(k):
            lab = -1
            for q in range(j):
                if roots[q] == roots[j]:
                    lab = out[c, q]
                    break
            if lab < 0:
                lab = nxt
                nxt += 1
            out[c, j] = lab
    return out


class PatternCounter:
    """Connection patterns of many bond masks at once (same result as connection_pattern)."""

    def __init__(self, marking: BoundaryMarking):
        region = marking.region
        verts = sorted(region.vertices)
        idx = {v: i for i, v in enumerate(verts)}
        nv = len(verts)
        arc_of = {}
        for j in range(marking.n):
            for e in marking.arc_crossing_edges(2 * j + 1):
                arc_of[e] = nv + j
        pa, pb = [], []
        for e in region.permitted_edges:
            a, b = e
            pa.append(idx[a] if a in idx else arc_of[e])
            pb.append(idx[b] if b in idx else arc_of[e])
        self.pa = np.array(pa, dtype=np.int64)
        self.pb = np.array(pb, dtype=np.int64)
        self.n_nodes = nv + marking.n
        self.arc_nodes = np.arange(nv, nv + marking.n, dtype=np.int64)

    def labels(self, masks: np.ndarray) -> np.ndarray:
        masks = np.ascontiguousarray(np.atleast_2d(masks), dtype=np.uint8)
        return _pattern_labels(masks, self.pa, self.pb, self.n_nodes, self.arc_nodes)

    def rgs(self, masks: np.ndarray) -> list[str]:
        return ["".join(str(int(x)) for x in row) for row in self.labels(masks)]


def event_s_indicator(marking: BoundaryMarking, bonds, S: Iterable[int]) -> bool:
    """True iff no dual cluster touches an odd number of the free arcs in S.

    Free arcs are named by their 1-based arc number (1, 3, ..., 2n-1).
    """
    S = sorted(set(S))
    if not S or len(S) % 2:
        raise ValueError("S must be a nonempty set of free arcs of even size")
    if any(k % 2 == 0 or not 1 <= k <= 2 * marking.n for k in S):
        raise ValueError(f"S must contain free arc numbers (odd, <= {2 * marking.n - 1})")
    region = marking.region
    bonds = _bond_lookup(marking, bonds)
    uf = UnionFind(region.dual_vertices)
    for a, b in dual_config(region, bonds):
        uf.union(a, b)
    touched: dict = {}
    for k in S:
        roots = {uf.find(w) for w in marking.arc_dual_vertices(k - 1)}
        for r in roots:
            touched[r] = touched.get(r, 0) + 1
    return all(c % 2 == 0 for c in touched.values())
