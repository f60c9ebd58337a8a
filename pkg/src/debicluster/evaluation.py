"""Statistics and metrics: Fisher exact and chi-squared tests on 2x2 tables,
multiple-testing correction, ARI of bipartitions, the significant best-match
performance score, and the fraction of significant bicluster pairs (FSP)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.special import gammaln
from scipy.stats import chi2


@lru_cache(maxsize=8)
def _log_factorials(n):
    return gammaln(np.arange(n + 1, dtype=np.float64) + 1.0)


def _lf(n):
    size = 1024
    while size <= n:
        size *= 4
    return _log_factorials(size)


# relative slack when comparing table probabilities to the observed one
_REL = 1e-7


def fisher_exact(a, b, c, d):
    """(left, right, two-tailed) p-values of Fisher's exact test for [[a, b], [c, d]].

    left/right are P(X <= a) and P(X >= a) under the hypergeometric law of the
    top-left cell given the margins; two-tailed sums all tables whose
    probability does not exceed that of the observed table.
    """
    a, b, c, d = int(a), int(b), int(c), int(d)
    if min(a, b, c, d) < 0:
        raise ValueError("table entries must be non-negative")
    n = a + b + c + d
    if n == 0:
        raise ValueError("empty table")
    r1, c1 = a + b, a + c
    lo, hi = max(0, r1 + c1 - n), min(r1, c1)
    if lo == hi:
        return 1.0, 1.0, 1.0
    lf = _lf(n)
    x = np.arange(lo, hi + 1)
    logp = lf[r1] + lf[n - r1] + lf[c1] + lf[n - c1] - lf[n] - (
        lf[x] + lf[r1 - x] + lf[c1 - x] + lf[n - r1 - c1 + x]
    )
    p = np.exp(logp)
    i = a - lo
    left = min(1.0, p[: i + 1].sum())
    right = min(1.0, p[i:].sum())
    two = min(1.0, p[logp <= logp[i] + _REL].sum())
    return float(left), float(right), float(two)


def chi2_2x2(a, b, c, d):
    """Pearson chi-squared test (1 df, no continuity correction); p = 1 for a zero margin."""
    a, b, c, d = float(a), float(b), float(c), float(d)
    n = a + b + c + d
    r1, r2, c1, c2 = a + b, c + d, a + c, b + d
    if min(r1, r2, c1, c2) <= 0:
        return 1.0
    stat = n * (a * d - b * c) ** 2 / (r1 * r2 * c1 * c2)
    return float(chi2.sf(stat, 1))


def chi2_statistic(a, b, c, d):
    n = a + b + c + d
    r1, r2, c1, c2 = a + b, c + d, a + c, b + d
    if min(r1, r2, c1, c2) <= 0:
        return 0.0
    return n * (a * d - b * c) ** 2 / (r1 * r2 * c1 * c2)


def adjust(pvalues, method="bh"):
    p = np.asarray(pvalues, dtype=np.float64)
    m = p.shape[0]
    if m == 0:
        return p.copy()
    if method == "bonferroni":
        return np.minimum(1.0, p * m)
    if method != "bh":
        raise ValueError(f"unknown adjustment {method!r}")
    order = np.argsort(p, kind="mergesort")
    ranked = p[order] * m / np.arange(1, m + 1)
    ranked = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(ranked, 1.0)
    return out


def _comb2(x):
    return x * (x - 1) / 2.0


def ari_from_counts(n11, n10, n01, n00):
    n = n11 + n10 + n01 + n00
    sum_cells = sum(_comb2(v) for v in (n11, n10, n01, n00))
    sum_rows = _comb2(n11 + n10) + _comb2(n01 + n00)
    sum_cols = _comb2(n11 + n01) + _comb2(n10 + n00)
    expected = sum_rows * sum_cols / _comb2(n)
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def ari_bipartition(A, B, n):
    """ARI between the partitions {A, S-A} and {B, S-B} of n samples."""
    A, B = set(A), set(B)
    if not 0 < len(A) < n or not 0 < len(B) < n:
        raise ValueError("sets must be non-empty proper subsets of the universe")
    n11 = len(A & B)
    n10 = len(A) - n11
    n01 = len(B) - n11
    return ari_from_counts(n11, n10, n01, n - n11 - n10 - n01)


def jaccard(a, b):
    a, b = set(a), set(b)
    u = len(a | b)
    return len(a & b) / u if u else 1.0


@dataclass
class GroundTruth:
    sets: list
    n: int

    def __post_init__(self):
        self.sets = [(str(name), frozenset(members)) for name, members in self.sets]
        for name, members in self.sets:
            if not members:
                raise ValueError(f"ground-truth set {name!r} is empty")
            if min(members) < 0 or max(members) >= self.n:
                raise ValueError(f"ground-truth set {name!r} leaves the universe of {self.n} samples")

    @property
    def names(self):
        return [name for name, _ in self.sets]


@dataclass
class TruthMatch:
    name: str
    size: int
    weight: float
    best_match: int | None
    pvalue_adj: float | None
    ari: float
    inverted: bool = False


@dataclass
class PerformanceReport:
    matches: list
    total: float
    alpha: float
    n_tests: int

    def to_dict(self):
        return {
            "total": self.total,
            "alpha": self.alpha,
            "n_tests": self.n_tests,
            "truth": [
                {
                    "name": t.name,
                    "size": t.size,
                    "weight": t.weight,
                    "best_match": t.best_match,
                    "pvalue_adj": t.pvalue_adj,
                    "ari": t.ari,
                    "inverted": t.inverted,
                }
                for t in self.matches
            ],
        }


def pair_statistics(truth_sets, predicted, n):
    """Fisher tests of every (truth, predicted) pair with under-representation inversion.

    Returns arrays (two-tailed p, inverted flag, ARI) of shape (m, k).
    """
    m, k = len(truth_sets), len(predicted)
    pv = np.ones((m, k))
    inv = np.zeros((m, k), dtype=bool)
    ari = np.zeros((m, k))
    for i, t in enumerate(truth_sets):
        t = set(t)
        for j, p in enumerate(predicted):
            p = set(p)
            both = len(t & p)
            table = (both, len(p) - both, len(t) - both, n - len(t | p))
            left, right, two = fisher_exact(*table)
            if right > left:
                p = set(range(n)) - p
                inv[i, j] = True
            pv[i, j] = two
            if 0 < len(p) < n:
                ari[i, j] = ari_bipartition(t, p, n)
    return pv, inv, ari


def best_match_performance(truth, predicted, n=None, alpha=0.05):
    """Weighted ARI of each truth set with its significant best-matching predicted set."""
    if not truth.sets:
        raise ValueError("empty ground truth")
    n = truth.n if n is None else n
    predicted = [frozenset(p) for p in predicted]
    for p in predicted:
        if not p:
            raise ValueError("predicted sets must be non-empty")
    truth_sets = [s for _, s in truth.sets]
    sizes = np.array([len(s) for s in truth_sets], dtype=np.float64)
    weights = sizes / sizes.sum()
    m, k = len(truth_sets), len(predicted)
    matches = []
    if k == 0:
        for (name, s), w in zip(truth.sets, weights):
            matches.append(TruthMatch(name, len(s), float(w), None, None, 0.0))
        return PerformanceReport(matches, 0.0, alpha, 0)
    pv, inv, ari = pair_statistics(truth_sets, predicted, n)
    padj = np.minimum(1.0, pv * (m * k))
    # each predicted set is a candidate only for its most significant truth set
    home = np.argmin(pv, axis=0)
    total = 0.0
    for i, ((name, s), w) in enumerate(zip(truth.sets, weights)):
        cand = [j for j in range(k) if home[j] == i and padj[i, j] < alpha]
        if cand:
            j = max(cand, key=lambda j: (ari[i, j], -j))
            matches.append(TruthMatch(name, len(s), float(w), j, float(padj[i, j]), float(ari[i, j]), bool(inv[i, j])))
            total += ari[i, j] * w
        else:
            matches.append(TruthMatch(name, len(s), float(w), None, None, 0.0))
    return PerformanceReport(matches, float(total), alpha, m * k)


def bicluster_cells(b, n_samples):
    f = np.fromiter(sorted(b.features), dtype=np.int64)
    s = np.fromiter(sorted(b.samples), dtype=np.int64)
    return np.unique((f[:, None] * n_samples + s[None, :]).ravel())


@dataclass
class RedundancyReport:
    fsp: float
    alpha: float
    pairs: list  # (i, j, jaccard_2d, chi2 p, bonferroni p, significant)

    def to_dict(self):
        return {
            "fsp": self.fsp,
            "alpha": self.alpha,
            "n_pairs": len(self.pairs),
            "pairs": [
                {"i": i, "j": j, "jaccard": jac, "pvalue": p, "pvalue_adj": q, "significant": sig}
                for i, j, jac, p, q, sig in self.pairs
            ],
        }


def redundancy(biclusters, n_features, n_samples, alpha=0.05):
    b = len(biclusters)
    if b < 2:
        raise ValueError("FSP needs at least two biclusters")
    grid = n_features * n_samples
    cells = [bicluster_cells(x, n_samples) for x in biclusters]
    n_pairs = b * (b - 1) // 2
    pairs = []
    n_sig = 0
    for i, j in combinations(range(b), 2):
        both = len(np.intersect1d(cells[i], cells[j], assume_unique=True))
        only_i = len(cells[i]) - both
        only_j = len(cells[j]) - both
        union = both + only_i + only_j
        p = chi2_2x2(both, only_i, only_j, grid - union)
        q = min(1.0, p * n_pairs)
        # significance requires positive association (over-represented overlap)
        sig = bool(q < alpha and both * grid > len(cells[i]) * len(cells[j]))
        n_sig += sig
        pairs.append((i, j, both / union if union else 1.0, p, q, sig))
    return RedundancyReport(n_sig / n_pairs, alpha, pairs)


def fsp(biclusters, n_features, n_samples, alpha=0.05):
    """Fraction of bicluster pairs whose cell overlap is significant after Bonferroni."""
    return redundancy(biclusters, n_features, n_samples, alpha).fsp
