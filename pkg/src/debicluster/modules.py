"""Clustering of binarized features into modules.

Features are linked when their minority sample sets overlap (Jaccard index
above a threshold); modules are Louvain communities of that graph or
connected components of a thresholded topological overlap matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureModule:
    members: frozenset
    signs: dict = field(hash=False, compare=False)
    mode: str

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("a module needs at least two features")


@dataclass(frozen=True)
class ClusteringParams:
    algorithm: str = "louvain"
    direction_mode: str = "separate"
    edge_threshold: float = 0.5
    louvain_resolution: float = 1.0
    tom_candidate_cutoffs: tuple = tuple(np.round(np.arange(0.1, 0.91, 0.1), 2))
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("louvain", "tom"):
            raise ValueError(f"unknown clustering algorithm {self.algorithm!r}")
        if self.direction_mode not in ("separate", "joint"):
            raise ValueError(f"unknown direction mode {self.direction_mode!r}")
        if not 0 <= self.edge_threshold < 1:
            raise ValueError("edge_threshold must lie in [0, 1)")
        if self.louvain_resolution <= 0:
            raise ValueError("louvain_resolution must be positive")


@dataclass
class SimilarityGraph:
    """Weighted undirected graph; node i is features[i]."""

    features: list
    weights: sparse.csr_matrix
    mode: str

    @property
    def n_nodes(self):
        return len(self.features)


def feature_similarity(a, b):
    """Jaccard index of the two minority sample sets."""
    sa, sb = a.minority, b.minority
    union = len(sa | sb)
    return len(sa & sb) / union if union else 1.0


def _jaccard_graph(features, n_samples, threshold, block=1024):
    m = len(features)
    if m == 0:
        return sparse.csr_matrix((0, 0))
    rows, cols = [], []
    for i, f in enumerate(features):
        cols.extend(f.minority)
        rows.extend([i] * len(f.minority))
    b = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.float32), (rows, cols)), shape=(m, n_samples)
    )
    size = np.asarray(b.sum(axis=1)).ravel()
    bt = b.T.tocsc()
    ri, ci, vals = [], [], []
    for start in range(0, m, block):
        stop = min(start + block, m)
        inter = (b[start:stop] @ bt).toarray()
        union = size[start:stop, None] + size[None, :] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            jac = np.where(union > 0, inter / union, 0.0)
        jac[np.arange(stop - start), np.arange(start, stop)] = 0.0
        r, c = np.nonzero(jac > threshold)
        ri.append(r + start)
        ci.append(c)
        vals.append(jac[r, c].astype(np.float64))
    ri, ci, vals = np.concatenate(ri), np.concatenate(ci), np.concatenate(vals)
    return sparse.csr_matrix((vals, (ri, ci)), shape=(m, m))


def build_similarity_graph(features, params, n_samples=None):
    """One graph per direction in separate mode, a single graph in joint mode."""
    if n_samples is None:
        n_samples = 1 + max((max(f.minority) for f in features if f.minority), default=0)
    if params.direction_mode == "separate":
        groups = [("up", [f for f in features if f.direction == "up"]),
                  ("down", [f for f in features if f.direction == "down"])]
    else:
        groups = [("mixed", list(features))]
    graphs = []
    for mode, feats in groups:
        if feats:
            graphs.append(SimilarityGraph(feats, _jaccard_graph(feats, n_samples, params.edge_threshold), mode))
    return graphs


# Louvain modularity maximization


def _one_level(indptr, indices, data, degree, m2, resolution, order):
    """Local moving phase. Returns community labels and whether any node moved."""
    n = len(degree)
    comm = list(range(n))
    tot = list(degree)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            ki = degree[i]
            ci = comm[i]
            links = {}
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j == i:
                    continue
                cj = comm[j]
                links[cj] = links.get(cj, 0.0) + data[p]
            tot[ci] -= ki
            scale = resolution * ki / m2
            best_c = ci
            best_gain = links.get(ci, 0.0) - scale * tot[ci]
            for c, w in links.items():
                gain = w - scale * tot[c]
                if gain > best_gain + 1e-12 * (abs(best_gain) + 1.0):
                    best_gain, best_c = gain, c
            tot[best_c] += ki
            if best_c != ci:
                comm[i] = best_c
                improved = True
                moved_any = True
    return comm, moved_any


def louvain(adjacency, resolution=1.0, seed=0):
    """Community labels (0..k-1) of a symmetric weighted sparse adjacency matrix."""
    a = sparse.csr_matrix(adjacency, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    m2 = a.sum()
    if m2 == 0:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    while True:
        degree = np.asarray(a.sum(axis=1)).ravel().tolist()
        order = rng.permutation(a.shape[0]).tolist()
        comm, moved = _one_level(
            a.indptr.tolist(), a.indices.tolist(), a.data.tolist(), degree, m2, resolution, order
        )
        if not moved:
            break
        _, comm = np.unique(comm, return_inverse=True)
        labels = comm[labels]
        h = sparse.csr_matrix((np.ones(len(comm)), (np.arange(len(comm)), comm)))
        a = (h.T @ a @ h).tocsr()
    # relabel by first appearance so labels do not depend on internal numbering
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[labels]


def modularity(adjacency, labels, resolution=1.0):
    a = sparse.csr_matrix(adjacency, dtype=np.float64)
    m2 = a.sum()
    if m2 == 0:
        return 0.0
    labels = np.asarray(labels)
    k = np.asarray(a.sum(axis=1)).ravel()
    coo = a.tocoo()
    inside = coo.data[labels[coo.row] == labels[coo.col]].sum()
    tot = np.bincount(labels, weights=k)
    return float(inside / m2 - resolution * (tot**2).sum() / m2**2)


def _make_module(features, mode):
    members = frozenset(f.feature_index for f in features)
    if mode != "mixed":
        return FeatureModule(members, {f.feature_index: 1 for f in features}, mode)
    n_up = sum(f.direction == "up" for f in features)
    n_down = len(features) - n_up
    if n_up != n_down:
        major = "up" if n_up > n_down else "down"
    else:
        major = max(features, key=lambda f: (f.snr, -f.feature_index)).direction
    signs = {f.feature_index: 1 if f.direction == major else -1 for f in features}
    if n_up == 0 or n_down == 0:
        mode = major
    return FeatureModule(members, signs, mode)


def _modules_from_labels(graph, labels):
    modules = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if len(idx) >= 2:
            modules.append(_make_module([graph.features[i] for i in idx], graph.mode))
    return modules


def louvain_modules(graph, resolution=1.0, seed=0):
    if graph.n_nodes == 0:
        return []
    labels = louvain(graph.weights, resolution, seed)
    return _modules_from_labels(graph, labels)


# Simplified WGCNA analogue


def topological_overlap(w):
    """Unsigned TOM of a dense symmetric weight matrix with zero diagonal."""
    w = np.asarray(w, dtype=np.float64).copy()
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    num = w @ w + w
    den = np.minimum(deg[:, None], deg[None, :]) + 1.0 - w
    tom = num / den
    np.fill_diagonal(tom, 1.0)
    return tom


def scale_free_r2(degrees):
    """R^2 of log10(frequency) against log10(degree) over nodes with degree >= 1."""
    d = np.asarray(degrees)
    d = d[d > 0]
    values, counts = np.unique(d, return_counts=True)
    if len(values) < 3:
        return 0.0
    x = np.log10(values)
    y = np.log10(counts / counts.sum())
    r = np.corrcoef(x, y)[0, 1]
    return float(r * r) if np.isfinite(r) else 0.0


def tom_modules(graph, candidate_cutoffs):
    if graph.n_nodes == 0:
        return []
    n_comp, comp = connected_components(graph.weights, directed=False)
    blocks = []
    for c in range(n_comp):
        idx = np.flatnonzero(comp == c)
        if len(idx) >= 2:
            blocks.append((idx, topological_overlap(graph.weights[idx][:, idx].toarray())))
    best = None
    for cutoff in candidate_cutoffs:
        labels = np.full(graph.n_nodes, -1, dtype=np.int64)
        degrees = np.zeros(graph.n_nodes, dtype=np.int64)
        next_label = 0
        for idx, tom in blocks:
            adj = tom > cutoff
            np.fill_diagonal(adj, False)
            degrees[idx] = adj.sum(axis=1)
            k, lab = connected_components(sparse.csr_matrix(adj), directed=False)
            labels[idx] = lab + next_label
            next_label += k
        r2 = scale_free_r2(degrees)
        if best is None or r2 > best[0]:
            best = (r2, cutoff, labels)
    r2, cutoff, labels = best
    log.info("TOM cutoff %.2f selected (R^2 = %.3f)", cutoff, r2)
    # nodes outside any block stay unlabelled singletons
    free = labels < 0
    labels[free] = labels.max(initial=-1) + 1 + np.arange(free.sum())
    return _modules_from_labels(graph, labels)


def detect_modules(features, params, n_samples=None):
    modules = []
    for graph in build_similarity_graph(features, params, n_samples):
        if params.algorithm == "louvain":
            modules.extend(louvain_modules(graph, params.louvain_resolution, params.seed))
        else:
            modules.extend(tom_modules(graph, params.tom_candidate_cutoffs))
    return modules
