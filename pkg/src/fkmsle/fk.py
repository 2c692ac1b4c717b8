"""Critical FK-Ising measure: weights, exact enumeration, Swendsen-Wang chain."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np
from numba import njit

from .lattice import Edge, Region, clusters, dual_edge

DEFAULT_ENUM_CAP = 22


def critical_p() -> float:
    # algebraically 2 - sqrt(2); this form rounds correctly in double precision
    return 2.0 / (2.0 + math.sqrt(2.0))


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")


def config_weight(region: Region, bonds: Iterable[Edge], p: float) -> float:
    """(p/(1-p))^|E| 2^C(E), exterior counted as one cluster."""
    _check_p(p)
    bonds = region.check_bonds(bonds)
    _, c = clusters(region, bonds)
    return (p / (1.0 - p)) ** len(bonds) * 2.0 ** c


# -- numba kernels ----------------------------------------------------------

@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _count_clusters(masks, ea, eb, n_nodes):
    n_cfg, m = masks.shape
    out = np.empty(n_cfg, dtype=np.int64)
    parent = np.empty(n_nodes, dtype=np.int64)
    for c in range(n_cfg):
        for v in range(n_nodes):
            parent[v] = v
        count = n_nodes
        for k in range(m):
            if masks[c, k]:
                ra = _find(parent, ea[k])
                rb = _find(parent, eb[k])
                if ra != rb:
                    parent[rb] = ra
                    count -= 1
        out[c] = count
    return out


@njit(cache=True)
def _sw_sweeps(states, ea, eb, n_nodes, p, u_spin, u_bond):
    """One Edwards-Sokal alternation per row of ``states`` (modified in place)."""
    n_chain, m = states.shape
    parent = np.empty(n_nodes, dtype=np.int64)
    spin = np.empty(n_nodes, dtype=np.int8)
    for c in range(n_chain):
        for v in range(n_nodes):
            parent[v] = v
        for k in range(m):
            if states[c, k]:
                ra = _find(parent, ea[k])
                rb = _find(parent, eb[k])
                if ra != rb:
                    parent[rb] = ra
        for v in range(n_nodes):
            r = _find(parent, v)
            spin[v] = 1 if u_spin[c, r] < 0.5 else -1
        for k in range(m):
            states[c, k] = 1 if (spin[ea[k]] == spin[eb[k]] and u_bond[c, k] < p) else 0


# -- graph arrays -----------------------------------------------------------

@dataclass(frozen=True)
class FKGraph:
    """Integer encoding of a region: vertices 0..|V|-1, exterior node |V|."""

    region: Region
    vertices: tuple
    ea: np.ndarray
    eb: np.ndarray

    @classmethod
    def of(cls, region: Region) -> "FKGraph":
        verts = tuple(sorted(region.vertices))
        idx = {v: i for i, v in enumerate(verts)}
        ext = len(verts)
        ea = np.array([idx.get(a, ext) for a, _ in region.permitted_edges], dtype=np.int64)
        eb = np.array([idx.get(b, ext) for _, b in region.permitted_edges], dtype=np.int64)
        return cls(region, verts, ea, eb)

    @property
    def n_nodes(self) -> int:
        return len(self.vertices) + 1

    @property
    def n_edges(self) -> int:
        return len(self.ea)

    def mask_of(self, bonds: Iterable[Edge]) -> np.ndarray:
        idx = self.region.edge_index
        m = np.zeros(self.n_edges, dtype=np.uint8)
        for e in self.region.check_bonds(bonds):
            m[idx[e]] = 1
        return m

    def bonds_of(self, mask) -> frozenset:
        P = self.region.permitted_edges
        return frozenset(P[i] for i in np.flatnonzero(mask))

    def cluster_counts(self, masks: np.ndarray) -> np.ndarray:
        return _count_clusters(np.ascontiguousarray(masks, dtype=np.uint8), self.ea, self.eb, self.n_nodes)


def all_masks(m: int) -> np.ndarray:
    k = np.arange(2 ** m, dtype=np.int64)
    return ((k[:, None] >> np.arange(m)) & 1).astype(np.uint8)


@dataclass
class ExactEnsemble:
    """All configurations of a small region with their FK weights."""

    graph: FKGraph
    masks: np.ndarray
    weights: np.ndarray
    p: float

    @property
    def normalization(self) -> float:
        return float(self.weights.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def entries(self) -> Iterator[tuple[frozenset, float]]:
        for mask, w in zip(self.masks, self.weights):
            yield self.graph.bonds_of(mask), float(w)

    def __len__(self) -> int:
        return len(self.weights)

    def cluster_counts(self) -> np.ndarray:
        """C(E) per configuration, exterior wired."""
        return self.graph.cluster_counts(self.masks)

    def dual_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """(|E*|, C(E*)) per configuration, counted on the dual graph."""
        region = self.graph.region
        dverts = region.dual_vertices
        didx = {w: i for i, w in enumerate(dverts)}
        incident = region.incident_edges
        da = np.array([didx[dual_edge(e)[0]] for e in incident], dtype=np.int64)
        db = np.array([didx[dual_edge(e)[1]] for e in incident], dtype=np.int64)
        pos = region.edge_index
        dmask = np.ones((len(self.masks), len(incident)), dtype=np.uint8)
        for j, e in enumerate(incident):
            if e in pos:
                dmask[:, j] = 1 - self.masks[:, pos[e]]
        cd = _count_clusters(dmask, da, db, len(dverts))
        return dmask.sum(axis=1).astype(np.int64), cd

    def dual_probabilities(self) -> np.ndarray:
        """(2(1-p)/p)^|E*| 2^C(E*) / Z*, computed on the dual graph."""
        nd, cd = self.dual_counts()
        x = 2.0 * (1.0 - self.p) / self.p
        w = x ** nd * 2.0 ** cd
        return w / w.sum()

    def euler_values(self) -> np.ndarray:
        """C(E*) + |E*| - C(E) per configuration (constant in E)."""
        nd, cd = self.dual_counts()
        return cd + nd - self.cluster_counts()


def enumerate_exact(region: Region, p: float | None = None, cap: int = DEFAULT_ENUM_CAP) -> ExactEnsemble:
    p = critical_p() if p is None else p
    _check_p(p)
    g = FKGraph.of(region)
    if g.n_edges > cap:
        raise ValueError(f"{g.n_edges} permitted edges exceeds enumeration cap {cap}")
    masks = all_masks(g.n_edges)
    c = g.cluster_counts(masks)
    w = (p / (1.0 - p)) ** masks.sum(axis=1) * 2.0 ** c
    return ExactEnsemble(g, masks, w, p)


# -- sampling ---------------------------------------------------------------

@dataclass
class RandomSource:
    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = np.random.Generator(np.random.PCG64(self.seed))


def sw_step(region: Region, bonds: Iterable[Edge], p: float, rng: RandomSource,
            graph: FKGraph | None = None) -> frozenset:
    """One Swendsen-Wang update of a bond configuration."""
    g = graph or FKGraph.of(region)
    state = g.mask_of(bonds)[None, :].copy()
    gen = rng.generator
    _sw_sweeps(state, g.ea, g.eb, g.n_nodes, p, gen.random((1, g.n_nodes)), gen.random((1, g.n_edges)))
    return g.bonds_of(state[0])


class SwendsenWangChain:
    """A single sequential chain started from the empty configuration."""

    def __init__(self, region: Region, p: float | None = None, seed: int = 0,
                 graph: FKGraph | None = None):
        self.p = critical_p() if p is None else p
        _check_p(self.p)
        self.graph = graph or FKGraph.of(region)
        self.rng = RandomSource(seed)
        self.state = np.zeros((1, self.graph.n_edges), dtype=np.uint8)
        self.sweep_count = 0

    def sweep(self, k: int = 1) -> np.ndarray:
        g, gen = self.graph, self.rng.generator
        for _ in range(k):
            _sw_sweeps(self.state, g.ea, g.eb, g.n_nodes, self.p,
                       gen.random((1, g.n_nodes)), gen.random((1, g.n_edges)))
        self.sweep_count += k
        return self.state[0]

    def samples(self, n: int, burn_in: int = 200, spacing: int = 10) -> Iterator[np.ndarray]:
        self.sweep(burn_in)
        for _ in range(n):
            yield self.sweep(spacing).copy()


def sample_independent(region: Region, n_chains: int, seed: int, p: float | None = None,
                       burn_in: int = 200, graph: FKGraph | None = None,
                       batch: int = 20000) -> np.ndarray:
    """Final states of ``n_chains`` independent chains (vectorized; small regions)."""
    p = critical_p() if p is None else p
    g = graph or FKGraph.of(region)
    gen = RandomSource(seed).generator
    out = np.empty((n_chains, g.n_edges), dtype=np.uint8)
    for start in range(0, n_chains, batch):
        c = min(batch, n_chains - start)
        st = np.zeros((c, g.n_edges), dtype=np.uint8)
        for _ in range(burn_in):
            _sw_sweeps(st, g.ea, g.eb, g.n_nodes, p, gen.random((c, g.n_nodes)), gen.random((c, g.n_edges)))
        out[start:start + c] = st
    return out


def stream_ndjson(chain: SwendsenWangChain, n: int, fh: IO[str], burn_in: int = 200,
                  spacing: int = 10) -> None:
    """Write sampled configurations as NDJSON lines."""
    seed = chain.rng.seed
    for mask in chain.samples(n, burn_in, spacing):
        rec = {"seed": seed, "sweep": chain.sweep_count,
               "open_edges": [int(i) for i in np.flatnonzero(mask)]}
        fh.write(json.dumps(rec) + "\n")
