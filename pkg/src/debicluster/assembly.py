"""Turning feature modules into biclusters and checking their differential expression."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .binarization import orient, snr_rows, split_rows
from .evaluation import adjust


@dataclass(frozen=True)
class Bicluster:
    features: frozenset
    signs: dict = field(hash=False, compare=False)
    samples: frozenset = frozenset()
    direction: str = "up"
    snr: float = 0.0
    per_feature_stats: tuple = field(default=None, hash=False, compare=False)

    @property
    def n_features(self):
        return len(self.features)

    @property
    def n_samples(self):
        return len(self.samples)


def _standardize(x):
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return np.divide(x - mu, sd, out=np.zeros_like(x), where=sd > 0)


def _direction(x, signs, mask):
    """up/down from the mean signed standardized difference, mixed if any sign is -1."""
    if (signs < 0).any():
        return "mixed"
    z = _standardize(x)
    diff = z[:, mask].mean(axis=1) - z[:, ~mask].mean(axis=1)
    return "up" if diff.mean() > 0 else "down"


def _score(x, signs):
    return (signs[:, None] * x).mean(axis=0)


def split_subspace(z, features, signs, method, seed, feature_ids):
    """Minority mask from binarizing the mean signed z-score of the features."""
    score = _score(z[features], signs)[None, :]
    high, valid = split_rows(score, method)
    if not valid[0]:
        return None
    key = (seed, "module") + tuple(sorted(feature_ids[f] for f in features))
    minority, _ = orient(score, high, valid, lambda i: key)
    return minority[0]


def assemble_bicluster(z, module, method="gmm", n_s=5, seed=0):
    """Bicluster for one feature module of the standardized matrix z, or None."""
    features = sorted(module.members)
    signs = np.array([module.signs.get(f, 1) for f in features], dtype=np.float64)
    x = z.values
    mask = split_subspace(x, features, signs, method, seed, z.feature_ids)
    if mask is None or mask.sum() < n_s:
        return None
    rows = x[features]
    per_feature = snr_rows(rows, np.broadcast_to(mask, rows.shape))
    return Bicluster(
        features=frozenset(features),
        signs={f: int(s) for f, s in zip(features, signs)},
        samples=frozenset(np.flatnonzero(mask).tolist()),
        direction=_direction(rows, signs, mask),
        snr=float(per_feature.mean()),
    )


def welch_pvalues(x, mask):
    a, b = x[:, mask], x[:, ~mask]
    diff = a.mean(axis=1) - b.mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"), warnings.catch_warnings():
        # constant rows: handled below
        warnings.simplefilter("ignore", RuntimeWarning)
        p = stats.ttest_ind(a, b, axis=1, equal_var=False).pvalue
    # zero variance in both groups: separated iff the means differ
    p = np.where(np.isnan(p), np.where(diff != 0, 0.0, 1.0), p)
    return diff, p


def de_verify(m, b, lfc_min=1.0, p_max=0.05):
    """Keep features differentially expressed between bicluster and background samples.

    Uses Welch t-tests on the raw values with BH adjustment across the
    bicluster's features. Returns None if fewer than two features survive.
    """
    features = sorted(b.features)
    mask = np.zeros(m.n_samples, dtype=bool)
    mask[list(b.samples)] = True
    x = m.values[features]
    diff, p = welch_pvalues(x, mask)
    padj = adjust(p, "bh")
    keep = (np.abs(diff) >= lfc_min) & (padj <= p_max)
    if keep.sum() < 2:
        return None
    kept = [f for f, k in zip(features, keep) if k]
    signs = np.array([b.signs.get(f, 1) for f in kept], dtype=np.float64)
    if (signs < 0).all():
        signs = -signs
    rows = x[keep]
    per_feature = snr_rows(rows, np.broadcast_to(mask, rows.shape))
    return Bicluster(
        features=frozenset(kept),
        signs={f: int(s) for f, s in zip(kept, signs)},
        samples=b.samples,
        direction=_direction(rows, signs, mask),
        snr=float(per_feature.mean()),
        per_feature_stats=tuple(
            (f, float(d), float(q)) for f, d, q, k in zip(features, diff, padj, keep) if k
        ),
    )


def sort_biclusters(biclusters, feature_ids):
    return sorted(biclusters, key=lambda b: (-b.snr, min(feature_ids[f] for f in b.features)))
