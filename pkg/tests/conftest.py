import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from fkmsle.lattice import EXT, build_rect_domain


def scipy_cluster_count(region, bonds):
    """Cluster count with the exterior wired, computed by scipy's graph routine."""
    verts = sorted(region.vertices)
    idx = {v: i for i, v in enumerate(verts)}
    ext = len(verts)
    rows, cols = [], []
    for a, b in bonds:
        rows.append(idx.get(a, ext))
        cols.append(idx.get(b, ext))
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(ext + 1, ext + 1))
    return connected_components(g, directed=False)[0]


@pytest.fixture
def rect():
    def make(cx, cy, offsets, mesh=1.0):
        return build_rect_domain(cx, cy, mesh, offsets)
    return make


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        lines.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
