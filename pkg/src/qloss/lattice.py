"""Planar surface-code lattice under qubit loss.

``planar`` boundary mode builds, for L >= 3, the standard single-logical
patch with L^2 + (L-1)^2 edge qubits: an (L-1) x L grid of vertices,
vertical edges dangling off the top and bottom rows (where logical Z
strings terminate), and the full left and right exteriors as the dual
regions where logical X strings terminate.  This geometry is exactly
self-dual for bond percolation, so the loss threshold sits at 1/2.
``L = 2`` is the 4-qubit one-plaquette instance of the detection/correction
protocol (edge order: top, left, right, bottom), whose X-string terminals
degenerate to the two bottom corner cells.

Losing an edge merges its two dual cells: merged cells away from the
terminal regions become superplaquettes (mod-2 product of their members),
merged cells absorbed by a terminal are discarded, and every star simply
drops its lost edges.  A deformed logical Z exists iff the surviving
primal graph connects the top leaves to the bottom leaves; a deformed
logical X exists iff the surviving dual graph connects the two terminal
regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .qudit import PauliString


class ConsistencyError(RuntimeError):
    """Internal invariant violated (reformed generators failed validation)."""


@dataclass(frozen=True)
class Edge:
    index: int
    kind: str           # "V" | "H"
    r: int
    c: int
    endpoints: tuple[int, int]   # primal node ids
    cells: tuple[int, int]       # dual cell ids


@dataclass
class LossLattice:
    """Surface-code lattice with a lost-edge mask and current generators."""

    L: int
    boundary: str
    n_edges: int
    edges: list[Edge]
    lost: frozenset[int]
    z_generators: list[frozenset[int]]
    x_generators: list[frozenset[int]]
    # primal terminals (node-id sets) for the deformed logical Z search
    primal_a: frozenset[int]
    primal_b: frozenset[int]
    # dual terminals (cell ids) for the deformed logical X search
    dual_terminals: tuple[int, int]
    n_vertices: int        # interior vertices (stars); leaf ids start here
    n_primal_nodes: int
    n_cells: int

    def surviving(self) -> list[int]:
        return [e for e in range(self.n_edges) if e not in self.lost]

    def z_pauli_strings(self) -> list[PauliString]:
        return [PauliString.from_map(self.n_edges, {e: "Z" for e in g})
                for g in self.z_generators]

    def x_pauli_strings(self) -> list[PauliString]:
        return [PauliString.from_map(self.n_edges, {e: "X" for e in g})
                for g in self.x_generators]

    def validate_commutation(self) -> None:
        """Every (Z, X) generator pair must share an even number of edges."""
        for zg in self.z_generators:
            for xg in self.x_generators:
                if len(zg & xg) % 2:
                    raise ConsistencyError(
                        f"generators {sorted(zg)} and {sorted(xg)} anticommute")

    def validate_support(self) -> None:
        for g in self.z_generators + self.x_generators:
            if g & self.lost:
                raise ConsistencyError("generator touches a lost edge")

    def generator_count(self) -> int:
        return len(self.z_generators) + len(self.x_generators)


def build_lattice(L: int, boundary: str = "planar") -> LossLattice:
    """Construct the loss-free lattice with its stabilizer generators."""
    if L < 2:
        raise ValueError(f"linear size must be >= 2, got {L}")
    if boundary == "planar":
        return _build_minimal() if L == 2 else _build_planar(L)
    if boundary == "toroidal":
        return _build_toroidal(L)
    raise ValueError(f"unknown boundary {boundary!r}")


def _build_planar(L: int) -> LossLattice:
    """Standard self-dual patch: (L-1) x L vertices, L^2 + (L-1)^2 edges."""
    rows, cols = L - 1, L

    def vertex(r: int, c: int) -> int:
        return r * cols + c

    n_vertices = rows * cols
    # leaves: top T_c then bottom B_c
    def top_leaf(c: int) -> int:
        return n_vertices + c

    def bottom_leaf(c: int) -> int:
        return n_vertices + cols + c

    # dual regions: cells (i, j) with i in 0..rows, j in 0..cols-2,
    # then the left and right exterior terminals
    n_cell_grid = (rows + 1) * (cols - 1)

    def cell(i: int, j: int) -> int:
        return i * (cols - 1) + j

    term_l, term_r = n_cell_grid, n_cell_grid + 1

    edges: list[Edge] = []

    def add_edge(kind: str, r: int, c: int, endpoints, cells_) -> None:
        edges.append(Edge(len(edges), kind, r, c, endpoints, cells_))

    for rv in range(rows + 1):
        for c in range(cols):
            if rv == 0:
                ends = (top_leaf(c), vertex(0, c))
            elif rv <= rows - 1:
                ends = (vertex(rv - 1, c), vertex(rv, c))
            else:
                ends = (vertex(rows - 1, c), bottom_leaf(c))
            left_cell = term_l if c == 0 else cell(rv, c - 1)
            right_cell = term_r if c == cols - 1 else cell(rv, c)
            add_edge("V", rv, c, ends, (left_cell, right_cell))
        if rv <= rows - 1:
            for ch in range(1, cols):
                add_edge("H", rv, ch,
                         (vertex(rv, ch - 1), vertex(rv, ch)),
                         (cell(rv, ch - 1), cell(rv + 1, ch - 1)))

    n_edges = len(edges)
    assert n_edges == L * L + (L - 1) * (L - 1)

    star: dict[int, set[int]] = {v: set() for v in range(n_vertices)}
    plaq: dict[int, set[int]] = {}
    for e in edges:
        for node in e.endpoints:
            if node < n_vertices:
                star[node].add(e.index)
        for cl in e.cells:
            if cl < n_cell_grid:
                plaq.setdefault(cl, set()).add(e.index)
    x_gens = [frozenset(s) for _, s in sorted(star.items())]
    z_gens = [frozenset(s) for _, s in sorted(plaq.items())]

    lat = LossLattice(
        L=L, boundary="planar", n_edges=n_edges, edges=edges,
        lost=frozenset(), z_generators=z_gens, x_generators=x_gens,
        primal_a=frozenset(top_leaf(c) for c in range(cols)),
        primal_b=frozenset(bottom_leaf(c) for c in range(cols)),
        dual_terminals=(term_l, term_r), n_vertices=n_vertices,
        n_primal_nodes=n_vertices + 2 * cols, n_cells=n_cell_grid + 2)
    lat.validate_commutation()
    return lat


def _build_minimal() -> LossLattice:
    """The protocol's 4-qubit patch: one star, two corner plaquettes.

    Edge order matches the protocol's qubit numbering (top, left, right,
    bottom); the dropped bottom-corner cells are the X-string terminals.
    """
    L = 2
    w = L - 1  # vertex grid side

    def vertex(r: int, c: int) -> int:
        return r * w + c

    n_vertices = w * w
    leaf_ids: dict[tuple, int] = {}

    def leaf(tag: tuple) -> int:
        if tag not in leaf_ids:
            leaf_ids[tag] = n_vertices + len(leaf_ids)
        return leaf_ids[tag]

    def cell(i: int, j: int) -> int:
        return i * L + j

    edges: list[Edge] = []

    def add_edge(kind: str, r: int, c: int, endpoints: tuple[int, int],
                 cells: tuple[int, int]) -> None:
        edges.append(Edge(len(edges), kind, r, c, endpoints, cells))

    # enumeration order: per vertex-row band, verticals then horizontals,
    # so L=2 yields the protocol's qubit order (top, left, right, bottom)
    for rv in range(L):
        for c in range(w):
            if rv == 0:
                ends = (leaf(("T", c)), vertex(0, c))
            elif rv <= L - 2:
                ends = (vertex(rv - 1, c), vertex(rv, c))
            else:
                ends = (vertex(L - 2, c), leaf(("B", c)))
            add_edge("V", rv, c, ends, (cell(rv, c), cell(rv, c + 1)))
        if rv <= L - 2:
            for ch in range(L):
                if ch == 0:
                    ends = (leaf(("L", rv)), vertex(rv, 0))
                elif ch <= L - 2:
                    ends = (vertex(rv, ch - 1), vertex(rv, ch))
                else:
                    ends = (vertex(rv, L - 2), leaf(("R", rv)))
                add_edge("H", rv, ch, ends, (cell(rv, ch), cell(rv + 1, ch)))

    n_edges = len(edges)
    assert n_edges == 2 * L * (L - 1)

    # X generators: one star per vertex
    star: dict[int, set[int]] = {vertex(r, c): set() for r in range(w) for c in range(w)}
    for e in edges:
        for node in e.endpoints:
            if node < n_vertices:
                star[node].add(e.index)
    x_gens = [frozenset(s) for _, s in sorted(star.items())]

    # Z generators: one plaquette per dual cell, except the two bottom corners
    term_l, term_r = cell(L - 1, 0), cell(L - 1, L - 1)
    plaq: dict[int, set[int]] = {}
    for e in edges:
        for cl in e.cells:
            plaq.setdefault(cl, set()).add(e.index)
    z_gens = [frozenset(supp) for cl, supp in sorted(plaq.items())
              if cl not in (term_l, term_r)]

    primal_a = frozenset(leaf(t) for t in list(leaf_ids)
                         if t[0] in ("T", "L", "R"))
    primal_b = frozenset(leaf(t) for t in list(leaf_ids) if t[0] == "B")

    lat = LossLattice(
        L=L, boundary="planar", n_edges=n_edges, edges=edges,
        lost=frozenset(), z_generators=z_gens, x_generators=x_gens,
        primal_a=primal_a, primal_b=primal_b,
        dual_terminals=(term_l, term_r), n_vertices=n_vertices,
        n_primal_nodes=n_vertices + len(leaf_ids), n_cells=L * L)
    lat.validate_commutation()
    return lat


def _build_toroidal(L: int) -> LossLattice:
    """L x L torus; used only as a percolation cross-check geometry."""
    def vertex(r: int, c: int) -> int:
        return (r % L) * L + (c % L)

    def cell(r: int, c: int) -> int:
        return (r % L) * L + (c % L)

    edges: list[Edge] = []
    for r in range(L):
        for c in range(L):
            edges.append(Edge(len(edges), "V", r, c,
                              (vertex(r, c), vertex(r + 1, c)),
                              (cell(r, c), cell(r, c - 1))))
            edges.append(Edge(len(edges), "H", r, c,
                              (vertex(r, c), vertex(r, c + 1)),
                              (cell(r, c), cell(r - 1, c))))
    star: dict[int, set[int]] = {}
    plaq: dict[int, set[int]] = {}
    for e in edges:
        for node in e.endpoints:
            star.setdefault(node, set()).add(e.index)
        for cl in e.cells:
            plaq.setdefault(cl, set()).add(e.index)
    # drop one star and one plaquette: they are products of all the others
    x_gens = [frozenset(s) for k, s in sorted(star.items())][:-1]
    z_gens = [frozenset(s) for k, s in sorted(plaq.items())][:-1]
    lat = LossLattice(
        L=L, boundary="toroidal", n_edges=len(edges), edges=edges,
        lost=frozenset(), z_generators=z_gens, x_generators=x_gens,
        primal_a=frozenset(vertex(0, c) for c in range(L)),
        primal_b=frozenset(vertex(L - 1, c) for c in range(L)),
        dual_terminals=(0, 0), n_vertices=L * L,
        n_primal_nodes=L * L, n_cells=L * L)
    lat.validate_commutation()
    return lat


def apply_losses(lattice: LossLattice,
                 spec: Iterable[int] | float,
                 rng: np.random.Generator | None = None) -> LossLattice:
    """Mark edges lost, either an explicit list or an iid rate with a generator."""
    if isinstance(spec, float):
        if rng is None:
            raise ValueError("iid loss rate requires a seeded generator")
        mask = rng.random(lattice.n_edges) < spec
        lost = frozenset(int(i) for i in np.nonzero(mask)[0])
    else:
        listed = [int(e) for e in spec]
        if len(set(listed)) != len(listed):
            raise ValueError("duplicate edge in explicit loss list")
        for e in listed:
            if not 0 <= e < lattice.n_edges:
                raise IndexError(f"edge {e} out of range")
        lost = frozenset(listed)
    return replace(lattice, lost=frozenset(lattice.lost | lost))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def reform_stabilizers(lattice: LossLattice) -> LossLattice:
    """Merge plaquettes across lost edges and shrink stars.

    Union-find runs over dual cells; classes that absorbed a terminal cell
    merge into the boundary and are discarded.  The mod-2 product over each
    class removes the lost edges automatically.  Commutation of the result
    is re-verified exhaustively.
    """
    if lattice.boundary != "planar":
        raise ValueError("stabilizer reformation is defined for planar lattices")
    uf = _UnionFind(lattice.n_cells)
    for e in lattice.lost:
        uf.union(*lattice.edges[e].cells)

    term_classes = {uf.find(t) for t in lattice.dual_terminals}
    cell_support: dict[int, set[int]] = {}
    for e in lattice.edges:
        if e.index in lattice.lost:
            continue
        for cl in e.cells:
            cell_support.setdefault(cl, set()).add(e.index)

    merged: dict[int, set[int]] = {}
    for cl, supp in cell_support.items():
        root = uf.find(cl)
        if root in term_classes or cl in lattice.dual_terminals:
            continue  # merged into the boundary / never a plaquette
        merged.setdefault(root, set()).symmetric_difference_update(supp)

    # a surviving edge interior to a merged class sits in two member cells
    # and cancels in the symmetric difference; lost edges never enter
    z_gens = [frozenset(s) for root, s in sorted(merged.items()) if s]

    x_gens = []
    for g in lattice.x_generators:
        shrunk = frozenset(g - lattice.lost)
        if shrunk:
            x_gens.append(shrunk)

    # losses can enclose an island: a surviving-graph component with no leaf
    # node, whose shrunk stars multiply to the identity.  Drop one star per
    # island to keep the generator list independent.
    uf_p = _UnionFind(lattice.n_primal_nodes)
    for e in lattice.edges:
        if e.index not in lattice.lost:
            uf_p.union(*e.endpoints)
    leaf_roots = {uf_p.find(n) for n in range(lattice.n_vertices,
                                              lattice.n_primal_nodes)}
    dropped_islands: set[int] = set()
    kept: list[frozenset[int]] = []
    for g in x_gens:
        root = uf_p.find(lattice.edges[next(iter(g))].endpoints[0])
        if root not in leaf_roots and root not in dropped_islands:
            dropped_islands.add(root)
            continue
        kept.append(g)
    x_gens = kept

    out = replace(lattice, z_generators=z_gens, x_generators=x_gens)
    out.validate_support()
    out.validate_commutation()
    return out


@dataclass
class LogicalSearch:
    correctable: bool
    t_z: PauliString | None
    t_x: PauliString | None


def _bfs_path(n_nodes: int, adjacency: dict[int, list[tuple[int, int]]],
              sources: Iterable[int], targets: set[int]) -> list[int] | None:
    """Edge list of a shortest path from any source to any target, or None."""
    from collections import deque
    prev: dict[int, tuple[int, int] | None] = {}
    queue = deque()
    for s in sources:
        prev[s] = None
        queue.append(s)
    while queue:
        node = queue.popleft()
        if node in targets:
            path = []
            while prev[node] is not None:
                parent, edge = prev[node]
                path.append(edge)
                node = parent
            return path[::-1]
        for nxt, edge in adjacency.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, edge)
                queue.append(nxt)
    return None


def find_logical(lattice: LossLattice) -> LogicalSearch:
    """Deformed logical operators avoiding all lost edges (planar mode).

    Call after :func:`reform_stabilizers`; the returned strings commute with
    every current generator and anticommute with each other.
    """
    if lattice.boundary != "planar":
        raise ValueError("deformed-logical search is defined for planar lattices")
    surviving = [lattice.edges[e] for e in lattice.surviving()]

    primal_adj: dict[int, list[tuple[int, int]]] = {}
    for e in surviving:
        a, b = e.endpoints
        primal_adj.setdefault(a, []).append((b, e.index))
        primal_adj.setdefault(b, []).append((a, e.index))
    z_path = _bfs_path(lattice.n_primal_nodes, primal_adj,
                       lattice.primal_a, set(lattice.primal_b))

    dual_adj: dict[int, list[tuple[int, int]]] = {}
    for e in surviving:
        a, b = e.cells
        dual_adj.setdefault(a, []).append((b, e.index))
        dual_adj.setdefault(b, []).append((a, e.index))
    term_l, term_r = lattice.dual_terminals
    x_path = _bfs_path(lattice.n_cells, dual_adj, [term_l], {term_r})

    t_z = (PauliString.from_map(lattice.n_edges, {e: "Z" for e in z_path})
           if z_path else None)
    t_x = (PauliString.from_map(lattice.n_edges, {e: "X" for e in x_path})
           if x_path else None)
    return LogicalSearch(t_z is not None and t_x is not None, t_z, t_x)


# ---------------------------------------------------------------------------
# percolation survival


def survival_check(lattice: LossLattice, lost_mask: np.ndarray) -> bool:
    """Fast correctability test for one loss mask (no generator reformation)."""
    uf_p = _UnionFind(lattice.n_primal_nodes + 2)
    src_p, dst_p = lattice.n_primal_nodes, lattice.n_primal_nodes + 1
    uf_d = _UnionFind(lattice.n_cells)
    for node in lattice.primal_a:
        uf_p.union(src_p, node)
    for node in lattice.primal_b:
        uf_p.union(dst_p, node)
    cut_wraps = lattice.boundary == "toroidal"
    for e in lattice.edges:
        if lost_mask[e.index]:
            continue
        if cut_wraps and e.kind == "V" and e.r == lattice.L - 1:
            continue  # cut the vertical wrap: survival = cylinder spanning
        uf_p.union(*e.endpoints)
        uf_d.union(*e.cells)
    if cut_wraps:
        return any(uf_p.find(a) == uf_p.find(b)
                   for a in lattice.primal_a for b in lattice.primal_b)
    term_l, term_r = lattice.dual_terminals
    return (uf_p.find(src_p) == uf_p.find(dst_p)
            and uf_d.find(term_l) == uf_d.find(term_r))


@dataclass
class SurvivalPoint:
    L: int
    p: float
    samples: int
    survivors: int

    @property
    def fraction(self) -> float:
        return self.survivors / self.samples

    @property
    def binom_std(self) -> float:
        f = self.fraction
        return math.sqrt(max(f * (1 - f), 0.0) / self.samples)


@dataclass
class PercolationResult:
    points: list[SurvivalPoint]
    threshold: float | None

    def curve(self, L: int) -> list[SurvivalPoint]:
        return [pt for pt in self.points if pt.L == L]


def _edge_arrays(lattice: LossLattice):
    ends = np.array([e.endpoints for e in lattice.edges], dtype=np.int64)
    cells = np.array([e.cells for e in lattice.edges], dtype=np.int64)
    return ends, cells


def _survival_fast(ends: np.ndarray, cells: np.ndarray, keep: np.ndarray,
                   n_primal: int, n_cells: int,
                   a_nodes: np.ndarray, b_nodes: np.ndarray,
                   terms: tuple[int, int]) -> bool:
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    ek = ends[keep]
    g = sp.coo_matrix((np.ones(len(ek) + len(a_nodes) + len(b_nodes)),
                       (np.concatenate([ek[:, 0], a_nodes,
                                        b_nodes]),
                        np.concatenate([ek[:, 1],
                                        np.full(len(a_nodes), n_primal),
                                        np.full(len(b_nodes), n_primal + 1)]))),
                      shape=(n_primal + 2, n_primal + 2))
    _, labels = connected_components(g, directed=False)
    if labels[n_primal] != labels[n_primal + 1]:
        return False
    ck = cells[keep]
    gd = sp.coo_matrix((np.ones(len(ck)), (ck[:, 0], ck[:, 1])),
                       shape=(n_cells, n_cells))
    _, dlabels = connected_components(gd, directed=False)
    return dlabels[terms[0]] == dlabels[terms[1]]


def _build_numba_kernel():
    """JIT union-find survival kernel; returns None when numba is absent."""
    try:
        from numba import njit
    except ImportError:
        return None

    @njit(cache=True)
    def _find(parent, x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while x != root:
            nxt = parent[x]
            parent[x] = root
            x = nxt
        return root

    @njit(cache=True)
    def kernel(ends, cells, keep, n_primal, n_cells, a_nodes, b_nodes, tl, tr):
        parent = np.arange(n_primal + 2)
        src, dst = n_primal, n_primal + 1
        for i in range(a_nodes.shape[0]):
            ra, rb = _find(parent, src), _find(parent, a_nodes[i])
            if ra != rb:
                parent[rb] = ra
        for i in range(b_nodes.shape[0]):
            ra, rb = _find(parent, dst), _find(parent, b_nodes[i])
            if ra != rb:
                parent[rb] = ra
        dparent = np.arange(n_cells)
        for e in range(ends.shape[0]):
            if not keep[e]:
                continue
            ra, rb = _find(parent, ends[e, 0]), _find(parent, ends[e, 1])
            if ra != rb:
                parent[rb] = ra
            rc, rd = _find(dparent, cells[e, 0]), _find(dparent, cells[e, 1])
            if rc != rd:
                dparent[rd] = rc
        if _find(parent, src) != _find(parent, dst):
            return False
        return _find(dparent, tl) == _find(dparent, tr)

    return kernel


_NUMBA_KERNEL = _build_numba_kernel()


def percolation_threshold(L_grid: Sequence[int], samples: int,
                          p_grid: Sequence[float], seed: int = 0) -> PercolationResult:
    """Monte Carlo survival curves and the two-size crossing estimate.

    Per-sample masks come from generators seeded by (seed, L, p index,
    sample index), so points are independent of evaluation order.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples per point")
    points: list[SurvivalPoint] = []
    for L in L_grid:
        lat = build_lattice(L, "planar")
        ends, cells = _edge_arrays(lat)
        a_nodes = np.fromiter(lat.primal_a, dtype=np.int64)
        b_nodes = np.fromiter(lat.primal_b, dtype=np.int64)
        for p_idx, p in enumerate(p_grid):
            survivors = 0
            for s in range(samples):
                rng = np.random.default_rng(
                    np.random.SeedSequence((seed, L, p_idx, s)))
                keep = rng.random(lat.n_edges) >= p
                if _NUMBA_KERNEL is not None:
                    alive = bool(_NUMBA_KERNEL(ends, cells, keep,
                                               lat.n_primal_nodes, lat.n_cells,
                                               a_nodes, b_nodes,
                                               *lat.dual_terminals))
                else:
                    alive = _survival_fast(ends, cells, keep, lat.n_primal_nodes,
                                           lat.n_cells, a_nodes, b_nodes,
                                           lat.dual_terminals)
                if alive:
                    survivors += 1
            points.append(SurvivalPoint(L, float(p), samples, survivors))
    threshold = None
    if len(L_grid) >= 2:
        threshold = crossing_estimate(points, min(L_grid), max(L_grid))
    return PercolationResult(points, threshold)


def crossing_estimate(points: Sequence[SurvivalPoint], L_small: int,
                      L_large: int) -> float | None:
    """Interpolated p where the survival curves of two sizes cross."""
    small = sorted((pt for pt in points if pt.L == L_small), key=lambda q: q.p)
    large = sorted((pt for pt in points if pt.L == L_large), key=lambda q: q.p)
    ps = [pt.p for pt in small]
    if ps != [pt.p for pt in large]:
        raise ValueError("curves must share one p grid")
    diff = [s.fraction - l.fraction for s, l in zip(small, large)]
    for i in range(len(diff) - 1):
        if diff[i] == 0.0 and 0 < small[i].fraction < 1:
            return ps[i]
        if diff[i] < 0 <= diff[i + 1]:
            span = diff[i + 1] - diff[i]
            t = -diff[i] / span if span else 0.5
            return ps[i] + t * (ps[i + 1] - ps[i])
    return None
