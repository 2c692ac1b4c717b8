"""Discrete fermionic observable: low-temperature expansion and Ising route.

Dual edge sets are encoded as bit masks over the dual graph of a Region,
so Conf is the span of the face cycles around the primal vertices.
"""
from __future__ import annotations

import cmath
import csv
import hashlib
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .lattice import (BoundaryMarking, Corner, Edge, Region, UnionFind, Vertex,
                      dual_edge, incident_edges, make_edge)

ALPHA = math.sqrt(2.0) - 1.0
MAX_SPIN_VERTICES = 22


def _region_of(where) -> Region:
    return where.region if isinstance(where, BoundaryMarking) else where


# -- phase conventions --------------------------------------------------------

def corner_angle(c: Corner) -> float:
    """arg(c - c*) taken in [-pi, pi)."""
    dx, dy = c.primal[0] - c.dual[0], c.primal[1] - c.dual[1]
    th = math.atan2(dy, dx)
    return -math.pi if th >= math.pi else th


@dataclass(frozen=True)
class PhaseConvention:
    """Square-root branch for eta_a = ((a - a*)/|a - a*|)^(-1/2).

    The anchor has argument in (-pi/2, pi/2]; ``branch=-1`` selects the other
    root everywhere.  Along an exploration the angle is continued through the
    turns of the path.
    """

    branch: int = 1

    def __post_init__(self):
        if self.branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")

    def eta_from_angle(self, theta: float) -> complex:
        return self.branch * cmath.exp(-0.5j * theta)

    def eta(self, a: Corner) -> complex:
        return self.eta_from_angle(corner_angle(a))


# -- winding ------------------------------------------------------------------

def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _turn(d_in, d_out) -> float:
    return math.atan2(_cross(d_in, d_out), d_in[0] * d_out[0] + d_in[1] * d_out[1])


def _chords_cross(c1, c2) -> bool:
    i, j = sorted(c1)
    k, l = c2
    return (i < k < j) != (i < l < j)


def winding_angle(S: Iterable[Edge], a: Corner, z: Corner, chooser: str = "left",
                  rng: np.random.Generator | None = None) -> float:
    """Total turning of the a -> z strand of S plus the half segments at a and z.

    Vertices of even degree >= 4 are resolved without transversal crossings;
    ``chooser`` picks among the admissible resolutions ("left", "right" or
    "random").
    """
    S = list(S)
    ports: dict = defaultdict(list)           # vertex -> [(direction, edge id)]
    for k, (p, q) in enumerate(S):
        ports[p].append(((q[0] - p[0], q[1] - p[1]), k))
        ports[q].append(((p[0] - q[0], p[1] - q[1]), k))
    da = (a.primal[0] - a.dual[0], a.primal[1] - a.dual[1])
    dz = (z.primal[0] - z.dual[0], z.primal[1] - z.dual[1])
    ports[a.dual].append((da, "A"))
    ports[z.dual].append((dz, "Z"))

    deg = {v: len(ps) for v, ps in ports.items()}
    for v, d in deg.items():
        if d % 2:
            raise ValueError(f"dual vertex {v} has odd degree after adding the corner segments")

    order = {v: sorted(ps, key=lambda pe: math.atan2(pe[0][1], pe[0][0])) for v, ps in ports.items()}
    used: dict = defaultdict(set)
    chords: dict = defaultdict(list)

    def port_index(v, eid):
        for i, (_, e) in enumerate(order[v]):
            if e == eid:
                return i
        raise KeyError(eid)

    v = a.dual
    d_in = (-da[0], -da[1])
    i_in = port_index(v, "A")
    total = 0.0
    for _ in range(4 * len(S) + 4):
        ps = order[v]
        m = len(ps)
        used[v].add(i_in)
        cands = []
        for j in range(m):
            if j == i_in or j in used[v]:
                continue
            lo, hi = sorted((i_in, j))
            between = sum(1 for x in range(lo + 1, hi) if x not in used[v])
            if between % 2:
                continue
            if any(_chords_cross((i_in, j), c) for c in chords[v]):
                continue
            cands.append(j)
        if not cands:
            raise RuntimeError("winding trace got stuck")
        turns = [_turn(d_in, ps[j][0]) for j in cands]
        if chooser == "left":
            j = cands[int(np.argmax(turns))]
        elif chooser == "right":
            j = cands[int(np.argmin(turns))]
        elif chooser == "random":
            j = cands[int((rng or np.random.default_rng()).integers(len(cands)))]
        else:
            raise ValueError(f"unknown chooser {chooser!r}")
        used[v].add(j)
        chords[v].append((i_in, j))
        d_out, eid = ps[j]
        total += _turn(d_in, d_out)
        if eid == "Z":
            return total
        p, q = S[eid]
        w = q if p == v else p
        i_in = port_index(w, eid)
        v, d_in = w, d_out
    raise RuntimeError("winding trace did not reach z")


def winding_phase(S: Iterable[Edge], a: Corner, z: Corner, chooser: str = "left",
                  rng: np.random.Generator | None = None) -> complex:
    """exp(-i wind(S) / 2)."""
    return cmath.exp(-0.5j * winding_angle(S, a, z, chooser, rng))


# -- dual cycle space -----------------------------------------------------------

class DualCycleSpace:
    """Even subgraphs of a Region's dual graph, spanned by the face cycles."""

    def __init__(self, region: Region):
        self.region = region
        self.edges = region.dual_graph_edges
        if len(self.edges) > 64:
            raise ValueError(f"{len(self.edges)} dual edges do not fit a 64-bit mask")
        self.index = {e: i for i, e in enumerate(self.edges)}
        self.vertices = tuple(sorted(region.vertices))
        free = region.free_dual_edges
        self.weighted_mask = np.uint64(sum(1 << i for i, e in enumerate(self.edges) if e not in free))
        self.faces = np.array([self.mask_of(dual_edge(e) for e in incident_edges(v))
                               for v in self.vertices], dtype=np.uint64)

    def mask_of(self, dual_edges: Iterable[Edge]) -> int:
        m = 0
        for e in dual_edges:
            m ^= 1 << self.index[e]
        return m

    def edges_of(self, mask: int) -> list[Edge]:
        mask = int(mask)
        return [self.edges[i] for i in range(len(self.edges)) if mask >> i & 1]

    def euler_dimension(self) -> int:
        """|E(H)| - |V(H)| + c(H), which should equal the number of faces."""
        uf = UnionFind(self.region.dual_vertices)
        for p, q in self.edges:
            uf.union(p, q)
        return len(self.edges) - len(self.region.dual_vertices) + uf.count

    @cached_property
    def all_masks(self) -> np.ndarray:
        if len(self.vertices) > MAX_SPIN_VERTICES:
            raise ValueError(f"{len(self.vertices)} faces exceed enumeration cap {MAX_SPIN_VERTICES}")
        out = np.zeros(1, dtype=np.uint64)
        for f in self.faces:
            out = np.concatenate([out, out ^ f])
        return out

    def weights(self, masks: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
        k = np.bitwise_count(masks & self.weighted_mask).astype(np.float64)
        return alpha ** k

    def dual_path(self, start: Vertex, goal: Vertex, rng: np.random.Generator | None = None) -> list[Edge]:
        """A shortest dual path (BFS), optionally with shuffled neighbour order."""
        adj = defaultdict(list)
        for p, q in self.edges:
            adj[p].append(q)
            adj[q].append(p)
        if start not in adj or goal not in adj:
            raise ValueError("dual endpoint not in the dual graph")
        prev = {start: None}
        dq = deque([start])
        while dq:
            v = dq.popleft()
            if v == goal:
                break
            nb = list(adj[v])
            if rng is not None:
                rng.shuffle(nb)
            for w in nb:
                if w not in prev:
                    prev[w] = v
                    dq.append(w)
        if goal not in prev:
            raise ValueError("dual endpoints are not connected")
        path, v = [], goal
        while prev[v] is not None:
            path.append(make_edge(prev[v], v))
            v = prev[v]
        return path[::-1]


# -- observable (low-temperature expansion) -------------------------------------

def _check_a(region: Region, a: Corner) -> None:
    if a.primal in region.vertices:
        raise ValueError("corner a must lie outside the domain")
    if a.dual not in region.dual_vertices:
        raise ValueError("a* is not a boundary dual vertex of the domain")


def _check_z(region: Region, z: Corner) -> None:
    if z.primal not in region.vertices:
        raise ValueError("z must be a corner of the domain")


def observable_lte(where, a: Corner, z: Corner, conv: PhaseConvention = PhaseConvention(),
                   eta_a: complex | None = None, alpha: float = ALPHA,
                   space: DualCycleSpace | None = None, chooser: str = "left") -> complex:
    """F(z) as a ratio of sums over even subgraphs with defects at a*, z*."""
    region = _region_of(where)
    _check_a(region, a)
    _check_z(region, z)
    space = space or DualCycleSpace(region)
    eta_a = conv.eta(a) if eta_a is None else eta_a
    masks = space.all_masks
    w = space.weights(masks, alpha)
    denom = w.sum()
    gamma = space.mask_of(space.dual_path(z.dual, a.dual))
    dmasks = masks ^ np.uint64(gamma)
    dw = space.weights(dmasks, alpha)
    num = 0.0 + 0.0j
    for m, wt in zip(dmasks, dw):
        num += winding_phase(space.edges_of(m), a, z, chooser) * wt
    return complex(1j * eta_a * num / denom)


# -- observable (Ising correlation) ----------------------------------------------

@dataclass(frozen=True)
class DisorderPath:
    """Dual path from z* to a*, and a primal path from z to the exterior."""

    dual_path: tuple[Edge, ...]
    primal_path: tuple[Edge, ...]


def disorder_path(region: Region, a: Corner, z: Corner,
                  rng: np.random.Generator | None = None) -> DisorderPath:
    space = DualCycleSpace(region)
    dual = space.dual_path(z.dual, a.dual, rng)
    V = region.vertices
    prev = {z.primal: None}
    dq = deque([z.primal])
    end = None
    while dq:
        v = dq.popleft()
        if v not in V:
            end = v
            break
        nb = [e for e in incident_edges(v)]
        if rng is not None:
            rng.shuffle(nb)
        for e in nb:
            w = e[1] if e[0] == v else e[0]
            if w not in prev:
                prev[w] = v
                dq.append(w)
    path, v = [], end
    while prev[v] is not None:
        path.append(make_edge(prev[v], v))
        v = prev[v]
    return DisorderPath(tuple(dual), tuple(path[::-1]))


class SpinEnsemble:
    """All spin assignments on a Region with the exterior spin fixed to +1."""

    def __init__(self, region: Region, alpha: float = ALPHA):
        self.region = region
        self.vertices = tuple(sorted(region.vertices))
        nv = len(self.vertices)
        if nv > MAX_SPIN_VERTICES:
            raise ValueError(f"{nv} vertices exceed enumeration cap {MAX_SPIN_VERTICES}")
        self.index = {v: i for i, v in enumerate(self.vertices)}
        k = np.arange(2 ** nv, dtype=np.int64)
        bits = (k[:, None] >> np.arange(nv)) & 1
        self.spins = np.concatenate([1 - 2 * bits, np.ones((2 ** nv, 1), dtype=np.int64)], axis=1)
        self.ext = nv
        disagree = np.zeros(2 ** nv)
        for e in region.permitted_edges:
            x, y = self.column(e[0]), self.column(e[1])
            disagree += self.spins[:, x] != self.spins[:, y]
        self.weights = alpha ** disagree
        self.alpha = alpha

    def column(self, v: Vertex) -> int:
        return self.index.get(v, self.ext)

    def expectation(self, values: np.ndarray) -> float:
        return float((values * self.weights).sum() / self.weights.sum())

    def disagreement_set(self, row: int) -> frozenset:
        """S(sigma): dual edges separating unequal spins."""
        s = self.spins[row]
        return frozenset(dual_edge(e) for e in self.region.incident_edges
                         if s[self.column(e[0])] != s[self.column(e[1])])


def eta_z(where, a: Corner, z: Corner, path: DisorderPath,
          conv: PhaseConvention = PhaseConvention(), eta_a: complex | None = None) -> complex:
    """i eta_a exp(-i wind/2) of the plain disorder strand (all spins equal)."""
    eta_a = conv.eta(a) if eta_a is None else eta_a
    return 1j * eta_a * winding_phase(path.dual_path, a, z)


def observable_ising(where, a: Corner, z: Corner, path: DisorderPath | None = None,
                     conv: PhaseConvention = PhaseConvention(), eta_a: complex | None = None,
                     alpha: float = ALPHA, ensemble: SpinEnsemble | None = None) -> complex:
    """eta_z E[sigma_z sigma_a prod_{xy across the disorder path} alpha^(sigma_x sigma_y)]."""
    region = _region_of(where)
    _check_a(region, a)
    _check_z(region, z)
    path = path or disorder_path(region, a, z)
    ens = ensemble or SpinEnsemble(region, alpha)
    sp = ens.spins
    val = sp[:, ens.column(z.primal)] * sp[:, ens.column(a.primal)]
    free = region.free_dual_edges
    val = val.astype(np.float64)
    for d in path.dual_path:
        if d in free:
            continue
        e = dual_edge(d)
        val = val * alpha ** (sp[:, ens.column(e[0])] * sp[:, ens.column(e[1])])
    return complex(eta_z(region, a, z, path, conv, eta_a) * ens.expectation(val))


# -- martingale -----------------------------------------------------------------

@dataclass
class MartingaleReport:
    residual: float
    n_prefixes: int
    n_excluded: int
    forced: int
    details: list


def main_component(path, t: int) -> frozenset | None:
    """Component of the explored domain at time t that keeps b2..b2n, if unique."""
    from .interface import contact_times, loop_positions, snapshot, _diag_primal
    mk = path.marking
    L = len(mk.domain.boundary_loop)
    o1 = mk.offsets[0]
    rel = [(o - o1) % L for o in mk.offsets]
    lo, hi = 0, L
    for tt, s in contact_times(path):
        if tt > t:
            break
        if mk.n >= 2 and rel[1] <= s < rel[-1]:
            return None
        if 0 < s < rel[1]:
            lo = max(lo, s)
        elif s >= rel[-1]:
            hi = min(hi, s)
    pos = loop_positions(mk)
    snap = snapshot(path, t)
    hits = [C for C in snap.components
            if any(lo < pos[w] < hi for v in C for w in _diag_primal(v) if w in pos)]
    return hits[0] if len(hits) == 1 else None


def explored_region(path, t: int) -> Region | None:
    from .interface import snapshot
    C = main_component(path, t)
    if C is None:
        return None
    snap = snapshot(path, t)
    inc = {e for v in C for e in incident_edges(v)}
    return Region(C, frozenset(e for e in snap.region.free_edges if e in inc))


def tracked_angle(path, t: int) -> float:
    return corner_angle(path.steps[0]) + 0.5 * math.pi * sum(path.turns()[:t])


def slide_to_boundary(region: Region, a: Corner, theta: float, closed: frozenset = frozenset(),
                      max_steps: int = 64) -> tuple[Corner, float] | None:
    """Advance a through steps whose edge states are fixed by the boundary conditions.

    Stops at the first corner whose next edge is a permitted (random) edge of
    the region; this is the point of its boundary separating the free part from
    the wired part.  The angle follows the turns.  ``closed`` lists edges
    outside the region already known to be closed (free arcs, revealed dual
    edges); any other edge outside the region is wired.
    """
    V = region.vertices
    permitted = region.edge_index
    free = region.free_edges
    for _ in range(max_steps):
        u, w = a.primal, a.dual
        m_in, m = a.midpoints()
        v = (2 * m[0] - u[0], 2 * m[1] - u[1])
        e = make_edge(u, v)
        if e in permitted:
            return a, theta
        if e in free or e in closed or u in V or v in V:
            nxt = Corner(u, (2 * m[0] - w[0], 2 * m[1] - w[1]))
        else:
            nxt = Corner(v, w)
        _, m2 = nxt.midpoints()
        d1 = (m[0] - m_in[0], m[1] - m_in[1])
        d2 = (m2[0] - m[0], m2[1] - m[1])
        theta += 0.5 * math.pi * (1 if _cross(d1, d2) > 0 else -1)
        a = nxt
    return None


def martingale_step_check(marking: BoundaryMarking, z: Corner, t: int,
                          conv: PhaseConvention = PhaseConvention(), p: float | None = None,
                          representation: str = "lte") -> MartingaleReport:
    """max over prefixes of |F_t(z) - E[F_{t+1}(z) | gamma[0..t]]|."""
    from .fk import enumerate_exact
    from .interface import trace_interface
    ens = enumerate_exact(marking.region, p)
    probs = ens.probabilities
    paths = [trace_interface(marking, m) for m in ens.masks]
    groups: dict = defaultdict(list)
    for i, pth in enumerate(paths):
        if len(pth) > t + 1:
            groups[tuple(pth.steps[:t + 1])].append(i)
    cache: dict = {}

    def F(pth, s):
        reg = explored_region(pth, s)
        if reg is None or z.primal not in reg.vertices or z.dual not in reg.dual_vertices:
            return None
        closed = marking.free_crossing | pth.revealed(s)[1]
        slid = slide_to_boundary(reg, pth.steps[s], tracked_angle(pth, s), closed)
        if slid is None:
            return None
        a, theta = slid
        eta = conv.eta_from_angle(theta)
        key = (reg, a, round(eta.real, 12), round(eta.imag, 12))
        if key not in cache:
            try:
                if representation == "lte":
                    cache[key] = observable_lte(reg, a, z, eta_a=eta)
                else:
                    cache[key] = observable_ising(reg, a, z, eta_a=eta)
            except ValueError:
                cache[key] = None
        return cache[key]

    worst, excluded, forced, details = 0.0, 0, 0, []
    for key, idx in groups.items():
        head = paths[idx[0]]
        f_t = F(head, t)
        children: dict = defaultdict(float)
        rep = {}
        for i in idx:
            c = paths[i].steps[t + 1]
            children[c] += probs[i]
            rep[c] = paths[i]
        total = sum(children.values())
        vals = [(q / total, F(rep[c], t + 1)) for c, q in children.items()]
        if f_t is None or any(v is None for _, v in vals):
            excluded += 1
            continue
        if len(vals) == 1:
            forced += 1
        r = abs(f_t - sum(q * v for q, v in vals))
        details.append((key, r, len(vals) == 1))
        worst = max(worst, r)
    return MartingaleReport(worst, len(details), excluded, forced, details)


# -- scaling ----------------------------------------------------------------------

def corner_pair(edge: Edge) -> tuple[Corner, Corner]:
    """The two corners at an edge with distinct primal and distinct dual endpoints."""
    x, y = edge
    w1, w2 = sorted(dual_edge(edge))
    return Corner(x, w1), Corner(y, w2)


def scaled_pair(marking: BoundaryMarking, edge: Edge, conv: PhaseConvention = PhaseConvention(),
                mesh: float | None = None, a: Corner | None = None) -> complex:
    """2^(-1/4) pi^(1/2) delta^(-1/2) (F(c1) + F(c2)) over the diagonal corner pair."""
    from .interface import start_corner
    mesh = marking.domain.mesh if mesh is None else mesh
    a = a or start_corner(marking)
    c1, c2 = corner_pair(edge)
    space = DualCycleSpace(marking.region)
    s = observable_lte(marking, a, c1, conv, space=space) + observable_lte(marking, a, c2, conv, space=space)
    return 2 ** -0.25 * math.sqrt(math.pi) * mesh ** -0.5 * s


def region_hash(region: Region) -> str:
    text = repr((sorted(region.vertices), sorted(region.free_edges)))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def write_observable_csv(fh, rows: Sequence[tuple[Corner, complex, str]], region: Region) -> None:
    h = region_hash(region)
    wr = csv.writer(fh)
    wr.writerow(["primal_x", "primal_y", "dual_x", "dual_y", "re_F", "im_F", "representation", "domain_hash"])
    for c, val, tag in rows:
        wr.writerow([c.primal[0], c.primal[1], c.dual[0], c.dual[1],
                     repr(val.real), repr(val.imag), tag, h])
