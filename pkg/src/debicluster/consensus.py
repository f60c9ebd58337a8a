"""Consensus biclusters from several independently seeded runs."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy import sparse

from .assembly import Bicluster, split_subspace, _direction
from .binarization import snr_rows
from .dataio import zscore_rows
from .evaluation import jaccard, pair_statistics
from .modules import louvain


def match_bicluster_sets(run_a, run_b, n_samples, alpha=0.05):
    """Significant best matches of run_a's biclusters (as truth) among run_b's.

    Same procedure as best_match_performance on the sample sets. Exact ties
    (biclusters sharing a sample set) are broken by feature-set Jaccard.
    Returns (i, j, sample-set Jaccard) triples.
    """
    if not run_a or not run_b:
        return []
    m, k = len(run_a), len(run_b)
    pv, _, ari = pair_statistics([a.samples for a in run_a], [b.samples for b in run_b], n_samples)
    padj = np.minimum(1.0, pv * (m * k))
    fj = np.array([[jaccard(a.features, b.features) for b in run_b] for a in run_a])
    home = [min(range(m), key=lambda i: (pv[i, j], -fj[i, j], i)) for j in range(k)]
    out = []
    for i in range(m):
        cand = [j for j in range(k) if home[j] == i and padj[i, j] < alpha]
        if cand:
            j = max(cand, key=lambda j: (ari[i, j], fj[i, j], -j))
            out.append((i, j, jaccard(run_a[i].samples, run_b[j].samples)))
    return out


def cutoff_grid(j_min, j_max, step=0.05):
    k = int(round((j_max - j_min) / step))
    return [round(j_min + i * step, 10) for i in range(k + 1)]


def elbow_cutoff(cutoffs, counts):
    """Cutoff with the largest second difference of the group counts; ties go low."""
    if len(cutoffs) < 3:
        return cutoffs[0]
    c = np.asarray(counts, dtype=np.float64)
    d2 = c[:-2] - 2 * c[1:-1] + c[2:]
    return cutoffs[1 + int(np.argmax(d2))]


@dataclass
class ConsensusResult:
    biclusters: list
    cutoff: float
    cutoffs: list
    group_counts: list
    groups: list = field(default_factory=list)  # member (run, index) pairs per output bicluster

    def provenance(self):
        return {
            "cutoff": self.cutoff,
            "scan": [{"cutoff": c, "groups": g} for c, g in zip(self.cutoffs, self.group_counts)],
            "biclusters": [
                {
                    "id": i,
                    "members": [{"run": r, "bicluster": j} for r, j in members],
                    "n_features": b.n_features,
                    "n_samples": b.n_samples,
                }
                for i, (b, members) in enumerate(zip(self.biclusters, self.groups))
            ],
        }


def _groups(w, cutoff, seed):
    a = w.multiply(w >= cutoff).tocsr()
    a.eliminate_zeros()
    labels = louvain(a, 1.0, seed)
    out = {}
    for node, lab in enumerate(labels):
        out.setdefault(lab, []).append(node)
    return [g for g in out.values() if len(g) >= 2]


def consensus_detailed(runs, m, j_min=0.3, j_max=0.9, f=1 / 3, method="gmm", n_s=5, seed=0, alpha=0.05):
    n = len(runs)
    if n < 2:
        raise ValueError("consensus needs at least two runs")
    if not 0 <= j_min <= j_max <= 1:
        raise ValueError("need 0 <= j_min <= j_max <= 1")
    fid = m.feature_ids
    nodes = [(r, i) for r, run in enumerate(runs) for i in range(len(run))]
    # canonical node order, so the grouping does not depend on the order of the runs
    nodes.sort(key=lambda ri: (
        tuple(sorted(fid[x] for x in runs[ri[0]][ri[1]].features)),
        tuple(sorted(runs[ri[0]][ri[1]].samples)),
    ))
    where = {ri: k for k, ri in enumerate(nodes)}
    edges = {}
    # both directions, so every pair of runs is treated symmetrically
    for ra, rb in permutations(range(n), 2):
        for i, j, jac in match_bicluster_sets(runs[ra], runs[rb], m.n_samples, alpha):
            a, b = where[(ra, i)], where[(rb, j)]
            edges[(a, b)] = edges[(b, a)] = jac
    k = len(nodes)
    if edges:
        r, c = zip(*edges)
        w = sparse.csr_matrix((list(edges.values()), (r, c)), shape=(k, k))
    else:
        w = sparse.csr_matrix((k, k))
    cutoffs = cutoff_grid(j_min, j_max)
    counts = [len(_groups(w, c, seed)) for c in cutoffs]
    cutoff = elbow_cutoff(cutoffs, counts)

    z = zscore_rows(m)
    x = z.values
    built = []
    for group in _groups(w, cutoff, seed):
        members = [nodes[k] for k in group]
        bics = [runs[r][i] for r, i in members]
        freq = Counter(x_ for b in bics for x_ in b.features)
        features = sorted(g for g, c in freq.items() if c >= f * n - 1e-9)
        if len(features) < 2:
            continue
        signs = np.array(
            [1.0 if sum(b.signs.get(g, 1) for b in bics if g in b.features) >= 0 else -1.0 for g in features]
        )
        if (signs < 0).all():
            signs = -signs
        mask = split_subspace(x, features, signs, method, seed, fid)
        if mask is None or mask.sum() < n_s:
            continue
        sub = x[features]
        per_feature = snr_rows(sub, np.broadcast_to(mask, sub.shape))
        b = Bicluster(
            features=frozenset(features),
            signs={g: int(s) for g, s in zip(features, signs)},
            samples=frozenset(np.flatnonzero(mask).tolist()),
            direction=_direction(m.values[features], signs, mask),
            snr=float(per_feature.mean()),
        )
        built.append((b, sorted(members)))
    built.sort(key=lambda t: (-t[0].snr, min(fid[g] for g in t[0].features)))
    return ConsensusResult([b for b, _ in built], cutoff, cutoffs, counts, [g for _, g in built])


def consensus_biclusters(runs, m, j_min=0.3, j_max=0.9, f=1 / 3, method="gmm", n_s=5, seed=0):
    """Biclusters reproduced across runs, re-split on their consensus feature sets."""
    return consensus_detailed(runs, m, j_min, j_max, f, method, n_s, seed).biclusters
