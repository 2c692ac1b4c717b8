"""Square-lattice geometry for discrete domains with wired/free boundary arcs.

All lattice points are stored in *doubled* integer coordinates: primal
vertices of the mesh-1 lattice sit at (even, even), dual vertices at
(odd, odd), edge midpoints at (odd, even) or (even, odd).  The mesh only
enters when positions are exported to the plane.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

Vertex = tuple[int, int]
Edge = tuple[Vertex, Vertex]

FREE = "free"
WIRED = "wired"
EXTERIOR_WIRED = "exterior_wired"
INTERIOR_ONLY = "interior_only"


def make_edge(a: Vertex, b: Vertex) -> Edge:
    if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 2:
        raise ValueError(f"{a} and {b} are not nearest neighbours")
    return (a, b) if a <= b else (b, a)


def edge_midpoint(e: Edge) -> Vertex:
    (ax, ay), (bx, by) = e
    return ((ax + bx) // 2, (ay + by) // 2)


def dual_edge(e: Edge) -> Edge:
    """The edge of the other lattice crossing ``e`` (works both ways)."""
    (ax, ay), (bx, by) = e
    mx, my = (ax + bx) // 2, (ay + by) // 2
    dx, dy = (bx - ax) // 2, (by - ay) // 2
    return make_edge((mx - dy, my + dx), (mx + dy, my - dx))


def edge_key(e: Edge) -> tuple:
    """Lexicographic (lower endpoint, direction) order used for edge indexing."""
    a, b = e
    return (a, 0 if a[1] == b[1] else 1)


def neighbours(v: Vertex) -> list[Vertex]:
    x, y = v
    return [(x + 2, y), (x, y + 2), (x - 2, y), (x, y - 2)]


def incident_edges(v: Vertex) -> list[Edge]:
    return [make_edge(v, w) for w in neighbours(v)]


class UnionFind:
    """Union-find with path halving; elements are arbitrary hashables."""

    def __init__(self, items: Iterable = ()):
        self.parent: dict = {}
        self.count = 0
        for it in items:
            self.add(it)

    def add(self, x) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.count += 1

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        self.count -= 1
        return True

    def groups(self) -> list[list]:
        out: dict = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return list(out.values())


@dataclass(frozen=True)
class Corner:
    """Midpoint of a primal vertex and a diagonally adjacent dual vertex."""

    primal: Vertex
    dual: Vertex

    def __post_init__(self):
        dx, dy = self.dual[0] - self.primal[0], self.dual[1] - self.primal[1]
        if abs(dx) != 1 or abs(dy) != 1 or self.primal[0] % 2 or self.primal[1] % 2:
            raise ValueError(f"not a corner: primal {self.primal}, dual {self.dual}")

    @property
    def step(self) -> Vertex:
        return (self.dual[0] - self.primal[0], self.dual[1] - self.primal[1])

    def midpoints(self) -> tuple[Vertex, Vertex]:
        """Medial vertices joined by this corner's medial edge, oriented with
        the primal vertex on the left."""
        (ux, uy), (sx, sy) = self.primal, self.step
        m1, m2 = (ux + sx, uy), (ux, uy + sy)
        return (m1, m2) if sx * sy > 0 else (m2, m1)

    def position(self, mesh: float = 1.0) -> complex:
        x = (self.primal[0] + self.dual[0]) / 4.0
        y = (self.primal[1] + self.dual[1]) / 4.0
        return complex(x, y) * mesh


@dataclass(frozen=True)
class Region:
    """A set of primal vertices together with the forbidden (free) edges that
    leave it.  Every other edge leaving the set is wired to one exterior
    cluster.  This is the common currency of the model: the original marked
    domain and every explored sub-domain are both Regions."""

    vertices: frozenset
    free_edges: frozenset = field(default_factory=frozenset)

    @cached_property
    def incident_edges(self) -> tuple[Edge, ...]:
        out = {e for v in self.vertices for e in incident_edges(v)}
        return tuple(sorted(out, key=edge_key))

    @cached_property
    def interior_edges(self) -> tuple[Edge, ...]:
        V = self.vertices
        return tuple(e for e in self.incident_edges if e[0] in V and e[1] in V)

    @cached_property
    def crossing_edges(self) -> tuple[Edge, ...]:
        V = self.vertices
        return tuple(e for e in self.incident_edges if (e[0] in V) != (e[1] in V))

    @cached_property
    def permitted_edges(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.incident_edges if e not in self.free_edges)

    @cached_property
    def edge_index(self) -> dict:
        return {e: i for i, e in enumerate(self.permitted_edges)}

    @cached_property
    def dual_graph_edges(self) -> tuple[Edge, ...]:
        return tuple(dual_edge(e) for e in self.incident_edges)

    @cached_property
    def dual_vertices(self) -> tuple[Vertex, ...]:
        return tuple(sorted({w for d in self.dual_graph_edges for w in d}))

    @cached_property
    def free_dual_edges(self) -> frozenset:
        return frozenset(dual_edge(e) for e in self.free_edges)

    def check_bonds(self, bonds: Iterable[Edge]) -> frozenset:
        bonds = frozenset(bonds)
        extra = bonds.difference(self.permitted_edges)
        if extra:
            raise ValueError(f"bonds outside the permitted edge set: {sorted(extra)[:3]}")
        return bonds

    def components(self) -> list[frozenset]:
        uf = UnionFind(self.vertices)
        for a, b in self.interior_edges:
            uf.union(a, b)
        return sorted((frozenset(g) for g in uf.groups()), key=lambda g: min(g))


@dataclass(frozen=True)
class LatticeDomain:
    """Simply connected discrete domain bounded by a simple dual loop."""

    mesh: float
    boundary_loop: tuple[Vertex, ...]
    primal_vertices: frozenset
    cells_x: int | None = None
    cells_y: int | None = None

    @cached_property
    def boundary_edges(self) -> tuple[Edge, ...]:
        L = self.boundary_loop
        return tuple(make_edge(L[i], L[(i + 1) % len(L)]) for i in range(len(L)))

    @cached_property
    def crossing_edges(self) -> tuple[Edge, ...]:
        """Primal edge crossing each boundary loop edge, aligned with the loop."""
        return tuple(dual_edge(d) for d in self.boundary_edges)

    @cached_property
    def interior_edges(self) -> tuple[Edge, ...]:
        return Region(self.primal_vertices).interior_edges

    @cached_property
    def dual_vertices(self) -> frozenset:
        return frozenset(Region(self.primal_vertices).dual_vertices)

    def position(self, v: Vertex) -> complex:
        """Planar position with the rectangle's lower-left loop corner at 0."""
        x0 = min(p[0] for p in self.boundary_loop)
        y0 = min(p[1] for p in self.boundary_loop)
        return complex((v[0] - x0) / 2.0, (v[1] - y0) / 2.0) * self.mesh


@dataclass(frozen=True)
class BoundaryMarking:
    """2n marked dual vertices on the loop; arc k runs from b_k to b_{k+1}
    counterclockwise and is free for odd k, wired for even k."""

    domain: LatticeDomain = field(repr=False)
    offsets: tuple[int, ...]

    def __post_init__(self):
        L = len(self.domain.boundary_loop)
        offs = self.offsets
        if len(offs) < 2 or len(offs) % 2:
            raise ValueError(f"need an even number >= 2 of marked points, got {len(offs)}")
        if len(set(offs)) != len(offs):
            raise ValueError("duplicate marked positions")
        if any(not 0 <= o < L for o in offs):
            raise ValueError(f"marked positions must be boundary offsets in [0, {L})")
        rel = [(o - offs[0]) % L for o in offs]
        if rel != sorted(rel):
            raise ValueError("marked positions are not in counterclockwise order")

    @property
    def n(self) -> int:
        return len(self.offsets) // 2

    @cached_property
    def marked_points(self) -> tuple[Vertex, ...]:
        return tuple(self.domain.boundary_loop[o] for o in self.offsets)

    @property
    def arc_types(self) -> tuple[str, ...]:
        return tuple(FREE if k % 2 == 0 else WIRED for k in range(len(self.offsets)))

    @cached_property
    def arc_of_loop_edge(self) -> tuple[int, ...]:
        """0-based arc index (arc k joins b_{k+1} to b_{k+2}) for each loop edge."""
        L = len(self.domain.boundary_loop)
        out = [0] * L
        m = len(self.offsets)
        for k in range(m):
            start, stop = self.offsets[k], self.offsets[(k + 1) % m]
            i = start
            while True:
                out[i] = k
                i = (i + 1) % L
                if i == stop:
                    break
        return tuple(out)

    def arc_crossing_edges(self, k: int) -> tuple[Edge, ...]:
        return tuple(e for e, a in zip(self.domain.crossing_edges, self.arc_of_loop_edge) if a == k)

    def arc_dual_vertices(self, k: int) -> frozenset:
        verts = set()
        for d, a in zip(self.domain.boundary_edges, self.arc_of_loop_edge):
            if a == k:
                verts.update(d)
        return frozenset(verts)

    @cached_property
    def free_crossing(self) -> frozenset:
        return frozenset(e for e, a in zip(self.domain.crossing_edges, self.arc_of_loop_edge) if a % 2 == 0)

    @cached_property
    def wired_crossing(self) -> frozenset:
        return frozenset(e for e, a in zip(self.domain.crossing_edges, self.arc_of_loop_edge) if a % 2 == 1)

    @cached_property
    def region(self) -> Region:
        return Region(self.domain.primal_vertices, self.free_crossing)

    @property
    def permitted_edges(self) -> tuple[Edge, ...]:
        return self.region.permitted_edges

    def to_json(self) -> str:
        d = self.domain
        return json.dumps({
            "cells_x": d.cells_x, "cells_y": d.cells_y, "mesh": d.mesh,
            "marked": list(self.offsets), "arc_types": list(self.arc_types),
        })


def _rect_loop(cells_x: int, cells_y: int) -> tuple[Vertex, ...]:
    X, Y = 2 * cells_x - 1, 2 * cells_y - 1
    loop = [(x, -1) for x in range(-1, X, 2)]
    loop += [(X, y) for y in range(-1, Y, 2)]
    loop += [(x, Y) for x in range(X, -1, -2)]
    loop += [(-1, y) for y in range(Y, -1, -2)]
    return tuple(loop)


def build_rect_domain(cells_x: int, cells_y: int, mesh: float,
                      marked_positions: Sequence[int]) -> tuple[LatticeDomain, BoundaryMarking]:
    """Rectangle of cells_x * cells_y primal vertices.

    The boundary loop starts at the lower-left dual corner and runs
    counterclockwise; marked positions are offsets along it.
    """
    if cells_x < 1 or cells_y < 1:
        raise ValueError("cells_x and cells_y must be >= 1")
    if mesh <= 0:
        raise ValueError("mesh must be positive")
    verts = frozenset((2 * i, 2 * j) for i in range(cells_x) for j in range(cells_y))
    dom = LatticeDomain(mesh, _rect_loop(cells_x, cells_y), verts, cells_x, cells_y)
    return dom, BoundaryMarking(dom, tuple(int(o) for o in marked_positions))


def domain_from_loop(loop: Sequence[Vertex], mesh: float = 1.0) -> LatticeDomain:
    """Validating constructor for an arbitrary simply connected domain."""
    loop = tuple((int(x), int(y)) for x, y in loop)
    if len(loop) < 4:
        raise ValueError("boundary loop too short")
    if len(set(loop)) != len(loop):
        raise ValueError("boundary loop is not simple")
    for x, y in loop:
        if x % 2 == 0 or y % 2 == 0:
            raise ValueError(f"{(x, y)} is not a dual vertex")
    for i in range(len(loop)):
        make_edge(loop[i], loop[(i + 1) % len(loop)])
    area2 = sum(loop[i][0] * loop[(i + 1) % len(loop)][1] - loop[(i + 1) % len(loop)][0] * loop[i][1]
                for i in range(len(loop)))
    if area2 <= 0:
        raise ValueError("boundary loop must be counterclockwise")
    xs = [p[0] for p in loop]
    ys = [p[1] for p in loop]
    vertical = [(loop[i], loop[(i + 1) % len(loop)]) for i in range(len(loop))
                if loop[i][0] == loop[(i + 1) % len(loop)][0]]
    verts = set()
    for px in range(min(xs) + 1, max(xs), 2):
        for py in range(min(ys) + 1, max(ys), 2):
            hits = sum(1 for (a, b) in vertical if a[0] > px and min(a[1], b[1]) < py < max(a[1], b[1]))
            if hits % 2:
                verts.add((px, py))
    return LatticeDomain(mesh, loop, frozenset(verts))


def domain_from_json(text: str) -> tuple[LatticeDomain, BoundaryMarking]:
    d = json.loads(text) if isinstance(text, str) else dict(text)
    dom, mk = build_rect_domain(d["cells_x"], d["cells_y"], d.get("mesh", 1.0), d["marked"])
    if "arc_types" in d and tuple(d["arc_types"]) != mk.arc_types:
        raise ValueError("arc_types must alternate free/wired starting with free at b1")
    return dom, mk


def dual_config(region: Region, bonds: Iterable[Edge]) -> frozenset:
    """E* = duals of all edges touching the region that are not open."""
    bonds = region.check_bonds(bonds)
    return frozenset(dual_edge(e) for e in region.incident_edges if e not in bonds)


EXT = ("ext",)


def clusters(region: Region, bonds: Iterable[Edge], wiring: str = EXTERIOR_WIRED) -> tuple[dict, int]:
    """Partition of the region's vertices (plus exterior nodes) by open bonds.

    With ``exterior_wired`` all outside endpoints are one node ``EXT`` and the
    returned count is C(E).  With ``interior_only`` each outside endpoint is
    its own node.
    """
    bonds = region.check_bonds(bonds)
    V = region.vertices
    uf = UnionFind(V)
    if wiring == EXTERIOR_WIRED:
        uf.add(EXT)
    elif wiring != INTERIOR_ONLY:
        raise ValueError(f"unknown wiring {wiring!r}")

    def node(v):
        if v in V:
            return v
        if wiring == EXTERIOR_WIRED:
            return EXT
        uf.add(v)
        return v

    for a, b in bonds:
        uf.union(node(a), node(b))
    labels = {x: uf.find(x) for x in uf.parent}
    return labels, uf.count


def dual_clusters(region: Region, dual_edges: Iterable[Edge]) -> tuple[dict, int]:
    uf = UnionFind(region.dual_vertices)
    for a, b in dual_edges:
        uf.union(a, b)
    return {x: uf.find(x) for x in uf.parent}, uf.count
