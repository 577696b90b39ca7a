"""Spatial structure over splat centers.

Builds a union-symmetrized kNN graph, runs farthest point sampling, and
computes per-node geodesic distance fields with two interchangeable backends:

* ``dijkstra`` - exact shortest paths over the graph edge lengths (the
  correctness oracle),
* ``heat`` - a smoothed estimate: one backward-Euler heat step from the
  source, unit descent directions from local least-squares gradients of
  log u, and an iterated conjugate-gradient Poisson integration, followed
  by a slope calibration against exact local distance patches.

All tie-breaking is deterministic (lower index wins), so downstream results
are reproducible bit-for-bit.  Heat state (weights, factorization,
calibration) is cached per graph, so many sources reuse one setup.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import NumericsError, ParameterError

BACKENDS = ("heat", "dijkstra")

# Heat-method discretization constants.  The diffusion time (mean edge / 2)^2
# and two normalize-integrate passes were calibrated on synthetic clouds to
# keep the mean deviation from exact graph distances below 5%.
HEAT_TIME_FACTOR = 0.25
HEAT_INTEGRATION_PASSES = 2
CG_TOLERANCE = 1e-8
CG_MAX_ITER = 5000
N_CALIBRATION_PROBES = 24


@dataclass
class NeighborGraph:
    """Symmetric neighbor graph with Euclidean edge lengths.

    Adjacency is stored CSR-style (indptr/indices/lengths); ``points`` keeps
    the node coordinates because the heat backend needs edge vectors.
    """

    points: np.ndarray      # (n, d)
    indptr: np.ndarray      # (n+1,)
    indices: np.ndarray     # (nnz,)
    lengths: np.ndarray     # (nnz,)
    k: int
    _heat_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _heat_cache: Optional[dict] = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.points.shape[0]

    def neighbors(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.lengths[lo:hi]

    def adjacency(self) -> sp.csr_matrix:
        n = self.node_count
        return sp.csr_matrix((self.lengths, self.indices, self.indptr), shape=(n, n))

    def mean_edge_length(self) -> float:
        return float(np.mean(self.lengths))

    @classmethod
    def from_edges(cls, points: np.ndarray,
                   edges: Sequence[Tuple[int, int]]) -> "NeighborGraph":
        """Build a graph from an explicit undirected edge list (test fixtures)."""
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        rows, cols = [], []
        for i, j in edges:
            if i == j:
                raise ParameterError("self-loops are not allowed")
            rows += [i, j]
            cols += [j, i]
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        adj = sp.csr_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(n, n))
        adj.sum_duplicates()
        coo = adj.tocoo()
        lengths = np.maximum(
            np.linalg.norm(points[coo.row] - points[coo.col], axis=1), 1e-12)
        adj = sp.csr_matrix((lengths, (coo.row, coo.col)), shape=(n, n))
        adj.sort_indices()
        return cls(points=points, indptr=adj.indptr, indices=adj.indices,
                   lengths=adj.data, k=0)


@dataclass(frozen=True)
class GeodesicField:
    """Per-node distances from one source node; +inf off its component."""

    source: int
    distances: np.ndarray
    backend: str


@dataclass(frozen=True)
class SampleSet:
    """Indices selected by farthest point sampling, in selection order."""

    indices: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


def build_knn_graph(centers: np.ndarray, k: int) -> NeighborGraph:
    """kNN graph (union-symmetrized) with deterministic tie handling.

    When several candidates sit at the same distance, the lower point index
    wins; ties that straddle the k-th slot are resolved by re-querying with a
    larger candidate pool.
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    if n < 2:
        raise ParameterError("need at least 2 points")
    if k < 1:
        raise ParameterError("k must be >= 1")
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than the point count {n}")

    tree = cKDTree(centers)
    m = min(n, k + 9)
    pending = np.arange(n)
    sel_idx = np.empty((n, k), dtype=np.int64)
    sel_len = np.empty((n, k), dtype=np.float64)
    while True:
        dist, idx = tree.query(centers[pending], k=m)
        ambiguous = []
        for row, node in enumerate(pending):
            d_row, i_row = dist[row], idx[row]
            keep = i_row != node          # drop the self entry
            d_row, i_row = d_row[keep], i_row[keep]
            order = np.lexsort((i_row, d_row))
            d_row, i_row = d_row[order], i_row[order]
            if d_row.shape[0] > k and m < n and d_row[k - 1] == d_row[-1]:
                # candidate pool was cut inside a tie group
                ambiguous.append(node)
                continue
            sel_idx[node] = i_row[:k]
            sel_len[node] = d_row[:k]
        if not ambiguous:
            break
        pending = np.asarray(ambiguous)
        m = min(n, m * 2)

    rows = np.repeat(np.arange(n), k)
    cols = sel_idx.ravel()
    data = np.maximum(sel_len.ravel(), 1e-12)
    directed = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    # union symmetrization; lengths are symmetric so elementwise max is exact
    sym = directed.maximum(directed.T).tocsr()
    sym.sort_indices()
    return NeighborGraph(points=centers, indptr=sym.indptr,
                         indices=sym.indices, lengths=sym.data, k=k)


def farthest_point_sampling(centers: np.ndarray, n: int,
                            seed_index: Optional[int] = None) -> SampleSet:
    """Greedy max-min subsampling.

    Default seed is the point farthest from the centroid; all argmax ties
    resolve to the lowest index.
    """
    centers = np.asarray(centers, dtype=np.float64)
    count = centers.shape[0]
    if n == 0:
        raise ParameterError("sample size must be positive")
    if n > count:
        raise ParameterError(f"cannot sample {n} of {count} points")
    if seed_index is None:
        centroid = centers.mean(axis=0)
        seed_index = int(np.argmax(np.linalg.norm(centers - centroid, axis=1)))
    elif not 0 <= seed_index < count:
        raise ParameterError(f"seed index {seed_index} out of range")

    selected = np.empty(n, dtype=np.int64)
    selected[0] = seed_index
    min_dist = np.linalg.norm(centers - centers[seed_index], axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        np.minimum(min_dist, np.linalg.norm(centers - centers[nxt], axis=1),
                   out=min_dist)
    return SampleSet(indices=selected)


def _weighted_lsq_gradients(points: np.ndarray, indptr: np.ndarray,
                            indices: np.ndarray, weights: np.ndarray,
                            values: np.ndarray) -> np.ndarray:
    """Per-node weighted least-squares gradient of a scalar field.

    Small eigenvalues of the normal matrix are truncated so that thin or
    one-sided stencils (sheets, wires) do not amplify noise out of plane.
    """
    n, dim = points.shape
    edge_src = np.repeat(np.arange(n), np.diff(indptr))
    edge_dst = indices
    vec = points[edge_dst] - points[edge_src]
    dval = values[edge_dst] - values[edge_src]

    ata = np.zeros((n, dim, dim))
    atb = np.zeros((n, dim))
    np.add.at(ata, edge_src, weights[:, None, None] * vec[:, :, None] * vec[:, None, :])
    np.add.at(atb, edge_src, weights[:, None] * vec * dval[:, None])
    evals, evecs = np.linalg.eigh(ata)
    lead = np.maximum(evals[:, -1:], 1e-300)
    inv = np.where(evals > 1e-3 * lead, 1.0 / np.maximum(evals, 1e-300), 0.0)
    return np.einsum("nij,nj,nkj,nk->ni", evecs, inv, evecs, atb)


def _stencil_gradient_magnitudes(points: np.ndarray, indptr: np.ndarray,
                                 indices: np.ndarray, weights: np.ndarray,
                                 values: np.ndarray,
                                 nodes: np.ndarray) -> np.ndarray:
    """Weighted-LSQ gradient magnitude at selected nodes only."""
    mags = np.empty(nodes.shape[0])
    for out, i in enumerate(nodes):
        lo, hi = indptr[i], indptr[i + 1]
        nb = indices[lo:hi]
        vec = points[nb] - points[i]
        dval = values[nb] - values[i]
        w = weights[lo:hi]
        ata = (w[:, None, None] * vec[:, :, None] * vec[:, None, :]).sum(axis=0)
        atb = (w[:, None] * vec * dval[:, None]).sum(axis=0)
        evals, evecs = np.linalg.eigh(ata)
        keep = evals > 1e-3 * max(evals[-1], 1e-300)
        inv = np.where(keep, 1.0 / np.maximum(evals, 1e-300), 0.0)
        grad = evecs @ (inv * (evecs.T @ atb))
        mags[out] = np.linalg.norm(grad)
    return mags


def _heat_state(graph: NeighborGraph) -> dict:
    """Shared per-graph heat state: weights, Laplacian pieces, calibration."""
    with graph._heat_lock:
        if graph._heat_cache is not None:
            return graph._heat_cache
        t = HEAT_TIME_FACTOR * graph.mean_edge_length() ** 2
        n = graph.node_count
        weights = np.exp(-(graph.lengths ** 2) / (4.0 * t))
        W = sp.csr_matrix((weights, graph.indices.copy(), graph.indptr.copy()),
                          shape=(n, n))
        n_comp, labels = csgraph.connected_components(W, directed=False)
        state = {"t": t, "weights": weights, "W": W, "labels": labels,
                 "solves": {}, "reference_slope": None}
        graph._heat_cache = state
        return state


def _component_pieces(graph: NeighborGraph, state: dict, comp: int):
    """Restriction of the heat system to one connected component."""
    if comp in state["solves"]:
        return state["solves"][comp]
    mask = np.flatnonzero(state["labels"] == comp)
    W_c = state["W"][mask][:, mask].tocsr()
    deg = np.asarray(W_c.sum(axis=1)).ravel()
    L_c = (sp.diags(deg) - W_c).tocsr()
    A = (sp.identity(mask.shape[0], format="csc") + state["t"] * L_c.tocsc())
    solve = spla.factorized(A)
    inv_diag = 1.0 / np.maximum(L_c.diagonal(), 1e-30)
    state["solves"][comp] = (mask, solve, L_c, W_c, inv_diag)
    return state["solves"][comp]


def _reference_slope(graph: NeighborGraph, state: dict) -> float:
    """Median LSQ-gradient magnitude of exact truncated distance patches.

    Exact graph distances are computed inside small balls around a fixed set
    of probe nodes; the same gradient estimator is then applied to those
    patches.  Calibrating the heat solution's gradient statistic to this
    target cancels both the kNN zigzag inflation and the estimator's own
    bias, without consulting any full oracle field.
    """
    if state["reference_slope"] is not None:
        return state["reference_slope"]
    n = graph.node_count
    mean_edge = graph.mean_edge_length()
    probes = np.linspace(0, n - 1, min(N_CALIBRATION_PROBES, n)).astype(int)
    dmat = csgraph.dijkstra(graph.adjacency(), directed=False, indices=probes,
                            limit=7.0 * mean_edge)
    mags = []
    for row in range(probes.shape[0]):
        d = dmat[row]
        finite = np.isfinite(d)
        mid = finite & (d >= 2.0 * mean_edge) & (d <= 4.0 * mean_edge)
        eligible = []
        for i in np.flatnonzero(mid):
            nb = graph.indices[graph.indptr[i]:graph.indptr[i + 1]]
            if finite[nb].all():
                eligible.append(i)
        if not eligible:
            continue
        vals = np.where(finite, d, 0.0)
        mags.append(_stencil_gradient_magnitudes(
            graph.points, graph.indptr, graph.indices, state["weights"], vals,
            np.asarray(eligible)))
    slope = float(np.median(np.concatenate(mags))) if mags else 1.0
    state["reference_slope"] = slope if slope > 1e-9 else 1.0
    return state["reference_slope"]


def _heat_distances(graph: NeighborGraph, source: int) -> np.ndarray:
    state = _heat_state(graph)
    comp = state["labels"][source]
    mask, solve, L_c, W_c, inv_diag = _component_pieces(graph, state, comp)
    local = int(np.searchsorted(mask, source))
    m = mask.shape[0]

    distances = np.full(graph.node_count, np.inf)
    if m == 1:
        distances[source] = 0.0
        return distances

    pts = graph.points[mask]
    w_c = W_c.data
    edge_src = np.repeat(np.arange(m), np.diff(W_c.indptr))
    edge_dst = W_c.indices
    edge_vec = pts[edge_src] - pts[edge_dst]

    # Step I: one backward-Euler heat step from the source indicator.
    delta = np.zeros(m)
    delta[local] = 1.0
    u = np.maximum(solve(delta), 1e-300)

    # Steps II/III, iterated: unit directions from LSQ gradients, then a
    # Poisson solve; the second pass re-normalizes the recovered field's own
    # gradients, which straightens junction and boundary regions.
    precond = spla.LinearOperator((m, m), matvec=lambda v: v * inv_diag)
    field = np.log(u)
    phi = None
    for it in range(HEAT_INTEGRATION_PASSES):
        grad = _weighted_lsq_gradients(pts, W_c.indptr, W_c.indices, w_c, field)
        norm = np.linalg.norm(grad, axis=1)
        X = np.zeros_like(grad)
        nz = norm > 1e-300
        sign = -1.0 if it == 0 else 1.0   # log u decays; phi grows
        X[nz] = sign * grad[nz] / norm[nz, None]

        Xe = 0.5 * (X[edge_src] + X[edge_dst])
        en = np.linalg.norm(Xe, axis=1)
        ok = en > 1e-12
        Xe[ok] /= en[ok, None]            # keep edge directions unit length
        flux = w_c * np.einsum("ed,ed->e", edge_vec, Xe)
        div = np.zeros(m)
        np.add.at(div, edge_src, flux)
        div -= div.mean()                 # project onto range(L)

        phi, info = spla.cg(L_c, div, rtol=CG_TOLERANCE, atol=0.0,
                            maxiter=CG_MAX_ITER, M=precond)
        if info != 0:
            residual = float(np.linalg.norm(L_c @ phi - div))
            raise NumericsError(
                f"Poisson solve did not converge (info={info}, "
                f"residual={residual:.3e}, nodes={m}); the graph Laplacian "
                f"may be near-singular beyond its constant nullspace")
        phi = phi - phi[local]
        if phi.mean() < 0.0:
            phi = -phi
        phi = np.maximum(phi, 0.0)
        field = phi

    # Scale calibration: match the field's mid-range gradient statistic to
    # the exact-patch reference computed with the same estimator.
    grad = _weighted_lsq_gradients(pts, W_c.indptr, W_c.indices, w_c, phi)
    mag = np.linalg.norm(grad, axis=1)
    lo, hi = np.quantile(phi, [0.3, 0.95])
    mid = (phi >= lo) & (phi <= hi) & (mag > 1e-12)
    if mid.any():
        s = float(np.median(mag[mid]))
        if s > 1e-9:
            phi *= _reference_slope(graph, state) / s

    # Source-neighborhood offset: direct neighbors of the source should sit
    # at their edge length; the diffused source smears them low.  The offset
    # fades in smoothly so phi stays 0 at the source and monotone elsewhere.
    nb_lo, nb_hi = graph.indptr[source], graph.indptr[source + 1]
    nb_local = np.searchsorted(mask, graph.indices[nb_lo:nb_hi])
    c0 = float(np.median(graph.lengths[nb_lo:nb_hi] - phi[nb_local]))
    if c0 > 1e-12:
        pos = phi > 0.0
        phi[pos] = phi[pos] + c0 * (1.0 - np.exp(-phi[pos] / c0))

    distances[mask] = phi
    distances[source] = 0.0
    return distances


def geodesic_distances(graph: NeighborGraph, source: int,
                       backend: str = "heat") -> GeodesicField:
    """Distance field from one node; disconnected nodes get +inf."""
    n = graph.node_count
    if not 0 <= source < n:
        raise ParameterError(f"source index {source} out of range")
    if backend not in BACKENDS:
        raise ParameterError(f"unknown backend '{backend}'")
    if backend == "dijkstra":
        dist = csgraph.dijkstra(graph.adjacency(), directed=False,
                                indices=source)
        dist = np.asarray(dist, dtype=np.float64)
        dist[source] = 0.0
    else:
        dist = _heat_distances(graph, source)
    return GeodesicField(source=source, distances=dist, backend=backend)
