"""Feature binarization: split each feature into a minority and a background
sample set, score the split by SNR and keep features whose SNR is unusual
for a split of pure standard-normal noise of the same size."""
from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

log = logging.getLogger(__name__)

METHODS = ("two_means", "ward", "gmm")
# SNR assigned to perfectly separated groups (zero spread on both sides)
SNR_CAP = 1e6

CHUNK = 1000
NULL_CHUNK = 5000


def stable_seed(*parts):
    """64-bit integer derived from the parts, independent of PYTHONHASHSEED."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def coin(*parts):
    return np.random.default_rng(stable_seed(*parts)).integers(2) == 1


def snr(values, subset):
    """|mean_in - mean_out| / (std_in + std_out), population std."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.zeros(values.shape[0], dtype=bool)
    idx = np.fromiter(subset, dtype=np.int64) if not isinstance(subset, np.ndarray) else subset
    mask[idx] = True
    k = int(mask.sum())
    if k == 0 or k == values.shape[0]:
        raise ValueError("subset must be non-empty and proper")
    a, b = values[mask], values[~mask]
    num = abs(a.mean() - b.mean())
    den = a.std() + b.std()
    if num == 0:
        return 0.0
    if den == 0:
        return SNR_CAP
    return min(num / den, SNR_CAP)


def snr_rows(x, mask):
    """SNR of every row of x for the per-row boolean split mask."""
    k = mask.sum(axis=1)
    n = x.shape[1]
    k_out = n - k
    s_in = np.where(mask, x, 0.0).sum(axis=1)
    s_out = x.sum(axis=1) - s_in
    mu_in = s_in / np.maximum(k, 1)
    mu_out = s_out / np.maximum(k_out, 1)
    d_in = np.where(mask, x - mu_in[:, None], 0.0)
    d_out = np.where(mask, 0.0, x - mu_out[:, None])
    sd_in = np.sqrt((d_in**2).sum(axis=1) / np.maximum(k, 1))
    sd_out = np.sqrt((d_out**2).sum(axis=1) / np.maximum(k_out, 1))
    num = np.abs(mu_in - mu_out)
    den = sd_in + sd_out
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(num == 0, 0.0, np.where(den == 0, SNR_CAP, num / den))
    return np.minimum(out, SNR_CAP)


# 1-D two-group splitters. Each returns a boolean matrix (True = high group)
# and a validity vector (False where the row could not be split).


def _split_two_means(x):
    """Exact 1-D 2-means: best threshold over all gaps between sorted values."""
    n = x.shape[1]
    s = np.sort(x, axis=1)
    cs = np.cumsum(s, axis=1)
    cs2 = np.cumsum(s * s, axis=1)
    tot, tot2 = cs[:, -1:], cs2[:, -1:]
    left = np.arange(1, n)
    sl, sl2 = cs[:, :-1], cs2[:, :-1]
    sse = (sl2 - sl**2 / left) + ((tot2 - sl2) - (tot - sl) ** 2 / (n - left))
    # only real gaps are admissible thresholds
    sse = np.where(s[:, 1:] > s[:, :-1], sse, np.inf)
    valid = np.isfinite(sse).any(axis=1)
    best = np.argmin(np.where(np.isfinite(sse), sse, np.inf), axis=1)
    thr = s[np.arange(x.shape[0]), best]
    return x > thr[:, None], valid


def _split_ward(x):
    high = np.zeros(x.shape, dtype=bool)
    valid = np.zeros(x.shape[0], dtype=bool)
    for i, row in enumerate(x):
        if row.max() == row.min():
            continue
        z = linkage(row[:, None], method="ward")
        labels = fcluster(z, 2, criterion="maxclust")
        m1 = row[labels == 1].mean()
        m2 = row[labels == 2].mean()
        high[i] = labels == (1 if m1 > m2 else 2)
        valid[i] = True
    return high, valid


def _split_gmm_numpy(x, max_iter=300, tol=1e-6):
    """Two-component 1-D Gaussian mixture by EM, run on all rows at once.

    Components start at the 25th/75th percentiles (min/max if those coincide)
    with equal weights and the row variance; a row stops once its
    log-likelihood improves by less than tol. Samples go to the upper
    component when its posterior is >= 0.5.
    """
    n_rows, n = x.shape
    lo = np.percentile(x, 25, axis=1)
    hi = np.percentile(x, 75, axis=1)
    same = hi <= lo
    lo = np.where(same, x.min(axis=1), lo)
    hi = np.where(same, x.max(axis=1), hi)
    var0 = x.var(axis=1)
    valid = var0 > 0
    floor = 1e-6 * var0 + 1e-300
    # component 0 starts low, component 1 starts high
    mu0, mu1 = lo.copy(), hi.copy()
    v0, v1 = var0.copy(), var0.copy()
    w1 = np.full(n_rows, 0.5)
    sum_x = x.sum(axis=1)
    sum_x2 = (x * x).sum(axis=1)

    def e_step(xr, mu0, mu1, v0, v1, w1):
        # log weight * density per component, up to the shared -0.5 log(2 pi)
        a = (np.log1p(-w1) - 0.5 * np.log(v0))[:, None] - 0.5 * (xr - mu0[:, None]) ** 2 / v0[:, None]
        b = (np.log(w1) - 0.5 * np.log(v1))[:, None] - 0.5 * (xr - mu1[:, None]) ** 2 / v1[:, None]
        diff = b - a
        e = np.exp(-np.abs(diff))
        r1 = np.where(diff >= 0, 1.0, e) / (1.0 + e)
        ll = (np.maximum(a, b) + np.log1p(e)).sum(axis=1) - 0.5 * n * np.log(2 * np.pi)
        return r1, ll

    rows = np.flatnonzero(valid)
    ll_prev = np.full(rows.size, -np.inf)
    for _ in range(max_iter):
        if rows.size == 0:
            break
        xr = x[rows]
        r1, ll = e_step(xr, mu0[rows], mu1[rows], v0[rows], v1[rows], w1[rows])
        n1 = r1.sum(axis=1)
        s1 = (r1 * xr).sum(axis=1)
        q1 = (r1 * xr * xr).sum(axis=1)
        n0 = n - n1
        s0 = sum_x[rows] - s1
        q0 = sum_x2[rows] - q1
        n0s, n1s = np.maximum(n0, 1e-300), np.maximum(n1, 1e-300)
        m0, m1 = s0 / n0s, s1 / n1s
        fl = floor[rows]
        v0[rows] = np.maximum(q0 / n0s - m0 * m0, fl)
        v1[rows] = np.maximum(q1 / n1s - m1 * m1, fl)
        mu0[rows], mu1[rows] = m0, m1
        w1[rows] = np.clip(n1 / n, 1e-300, 1 - 1e-16)
        done = (ll - ll_prev) < tol
        ll_prev = ll[~done]
        rows = rows[~done]

    high = np.zeros(x.shape, dtype=bool)
    rows = np.flatnonzero(valid)
    if rows.size:
        r1, _ = e_step(x[rows], mu0[rows], mu1[rows], v0[rows], v1[rows], w1[rows])
        upper_is_1 = mu1[rows] >= mu0[rows]
        p_upper = np.where(upper_is_1[:, None], r1, 1.0 - r1)
        high[rows] = p_upper >= 0.5
    k = high.sum(axis=1)
    valid &= (k > 0) & (k < n)
    return high, valid


def _em_kernel(x, mu0, mu1, v0, v1, w1, floor, valid, max_iter, tol, high):
    n_rows, n = x.shape
    half_log_2pi = 0.5 * math.log(2.0 * math.pi)
    for i in range(n_rows):
        if not valid[i]:
            continue
        sx = 0.0
        sx2 = 0.0
        for j in range(n):
            sx += x[i, j]
            sx2 += x[i, j] * x[i, j]
        m0, m1, a0, a1, w = mu0[i], mu1[i], v0[i], v1[i], w1[i]
        ll_prev = -np.inf
        for _ in range(max_iter):
            c0 = math.log1p(-w) - 0.5 * math.log(a0)
            c1 = math.log(w) - 0.5 * math.log(a1)
            h0 = 0.5 / a0
            h1 = 0.5 / a1
            ll = 0.0
            n1 = 0.0
            s1 = 0.0
            q1 = 0.0
            # log(1 + e) summed as the log of a product, flushed before it can overflow
            prod = 1.0
            for j in range(n):
                xj = x[i, j]
                a = c0 - h0 * (xj - m0) * (xj - m0)
                b = c1 - h1 * (xj - m1) * (xj - m1)
                d = b - a
                e = math.exp(-abs(d))
                inv = 1.0 / (1.0 + e)
                if d >= 0:
                    r = inv
                    ll += b
                else:
                    r = e * inv
                    ll += a
                prod *= 1.0 + e
                if (j & 511) == 511:
                    ll += math.log(prod)
                    prod = 1.0
                n1 += r
                s1 += r * xj
                q1 += r * xj * xj
            ll += math.log(prod) - n * half_log_2pi
            n0 = max(n - n1, 1e-300)
            n1s = max(n1, 1e-300)
            m0 = (sx - s1) / n0
            m1 = s1 / n1s
            a0 = max((sx2 - q1) / n0 - m0 * m0, floor[i])
            a1 = max(q1 / n1s - m1 * m1, floor[i])
            w = min(max(n1 / n, 1e-300), 1.0 - 1e-16)
            if ll - ll_prev < tol:
                break
            ll_prev = ll
        c0 = math.log1p(-w) - 0.5 * math.log(a0)
        c1 = math.log(w) - 0.5 * math.log(a1)
        upper_is_1 = m1 >= m0
        for j in range(n):
            xj = x[i, j]
            d = (c1 - 0.5 * (xj - m1) ** 2 / a1) - (c0 - 0.5 * (xj - m0) ** 2 / a0)
            e = math.exp(-abs(d))
            r = 1.0 / (1.0 + e) if d >= 0 else e / (1.0 + e)
            p_upper = r if upper_is_1 else 1.0 - r
            high[i, j] = p_upper >= 0.5


try:
    from numba import njit

    _em_kernel_jit = njit(cache=True, fastmath=True)(_em_kernel)
except ImportError:  # pragma: no cover
    _em_kernel_jit = None


def _split_gmm(x, max_iter=300, tol=1e-6):
    """Same EM as _split_gmm_numpy, compiled with numba when available."""
    if _em_kernel_jit is None:
        return _split_gmm_numpy(x, max_iter, tol)
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[1]
    lo = np.percentile(x, 25, axis=1)
    hi = np.percentile(x, 75, axis=1)
    same = hi <= lo
    lo = np.where(same, x.min(axis=1), lo)
    hi = np.where(same, x.max(axis=1), hi)
    var0 = x.var(axis=1)
    valid = var0 > 0
    high = np.zeros(x.shape, dtype=np.bool_)
    _em_kernel_jit(
        x, lo, hi, var0.copy(), var0.copy(), np.full(x.shape[0], 0.5),
        1e-6 * var0 + 1e-300, valid, max_iter, tol, high,
    )
    k = high.sum(axis=1)
    valid &= (k > 0) & (k < n)
    return high, valid


_SPLITTERS = {"two_means": _split_two_means, "ward": _split_ward, "gmm": _split_gmm}


def split_rows(x, method, threads=1):
    if method not in _SPLITTERS:
        raise ValueError(f"unknown binarization method {method!r}; expected one of {METHODS}")
    fn = _SPLITTERS[method]
    chunks = [x[i : i + CHUNK] for i in range(0, x.shape[0], CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    if not parts:
        return np.zeros(x.shape, dtype=bool), np.zeros(0, dtype=bool)
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def orient(x, high, valid, tie_keys):
    """Pick the smaller group as minority; exact halves decided by a seeded coin.

    Returns (minority mask, direction array of +1 up / -1 down).
    """
    n = x.shape[1]
    k_hi = high.sum(axis=1)
    minority_is_high = k_hi < n - k_hi
    for i in np.flatnonzero(valid & (2 * k_hi == n)):
        minority_is_high[i] = coin(*tie_keys(i))
    minority = np.where(minority_is_high[:, None], high, ~high)
    minority[~valid] = False
    k = minority.sum(axis=1)
    s_in = np.where(minority, x, 0.0).sum(axis=1)
    mu_in = s_in / np.maximum(k, 1)
    mu_out = (x.sum(axis=1) - s_in) / np.maximum(n - k, 1)
    direction = np.where(mu_in > mu_out, 1, -1)
    return minority, direction


def binarize_feature(values, method="gmm", seed=0):
    """Split one feature into (sorted minority indices, "up" | "down").

    Returns None when the values are constant.
    """
    x = np.asarray(values, dtype=np.float64)[None, :]
    if x.shape[1] < 2:
        raise ValueError("need at least two values")
    high, valid = split_rows(x, method)
    if not valid[0]:
        return None
    minority, direction = orient(x, high, valid, lambda i: (seed,))
    return np.flatnonzero(minority[0]), "up" if direction[0] > 0 else "down"


# Empirical null model


def n_null_draws(p_threshold):
    return max(10000, math.ceil(10.0 / p_threshold - 1e-9))


@dataclass
class NullSnrModel:
    n_samples: int
    method: str
    n_draws: int
    seed: int
    draws: dict = field(default_factory=dict, repr=False)

    def pvalue(self, k, observed):
        return empirical_pvalue(self, k, observed)


def _null_snr_chunk(z, sizes):
    """SNR of the top-k order statistics vs the rest, for each k in sizes."""
    n = z.shape[1]
    cs = np.cumsum(z, axis=1)
    cs2 = np.cumsum(z * z, axis=1)
    tot, tot2 = cs[:, -1], cs2[:, -1]
    out = np.empty((len(sizes), z.shape[0]))
    for j, k in enumerate(sizes):
        rest_sum, rest_sq = cs[:, n - k - 1], cs2[:, n - k - 1]
        top_sum, top_sq = tot - rest_sum, tot2 - rest_sq
        mu_t, mu_r = top_sum / k, rest_sum / (n - k)
        sd_t = np.sqrt(np.maximum(top_sq / k - mu_t**2, 0.0))
        sd_r = np.sqrt(np.maximum(rest_sq / (n - k) - mu_r**2, 0.0))
        out[j] = (mu_t - mu_r) / (sd_t + sd_r)
    return out


def _generate_null(n_samples, sizes, n_draws, method, seed):
    rng = np.random.default_rng([stable_seed("null", seed, n_samples, method) % 2**63])
    acc = [[] for _ in sizes]
    done = 0
    while done < n_draws:
        m = min(NULL_CHUNK, n_draws - done)
        z = np.sort(rng.standard_normal((m, n_samples)), axis=1)
        res = _null_snr_chunk(z, sizes)
        for j in range(len(sizes)):
            acc[j].append(res[j])
        done += m
    return {k: np.sort(np.concatenate(a)) for k, a in zip(sizes, acc)}


_MAGIC = b"DBNULL"
_VERSION = 1


def _cache_path(cache_dir, n_samples, method, n_draws, seed):
    return Path(cache_dir) / f"null_n{n_samples}_{method}_N{n_draws}_seed{seed}.bin"


def save_null_model(path, model):
    meth = model.method.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IqqqI", _VERSION, model.n_samples, model.n_draws, model.seed, len(meth)))
        fh.write(meth)
        fh.write(struct.pack("<I", len(model.draws)))
        for k in sorted(model.draws):
            fh.write(struct.pack("<q", k))
            fh.write(np.ascontiguousarray(model.draws[k], dtype="<f8").tobytes())


def load_null_model(path, n_samples=None, method=None, n_draws=None, seed=None):
    """Read a cache file; returns None if it is missing, corrupt or keyed differently."""
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                return None
            version, n, big_n, sd, lm = struct.unpack("<IqqqI", fh.read(struct.calcsize("<IqqqI")))
            if version != _VERSION:
                return None
            meth = fh.read(lm).decode()
            key = (n_samples, method, n_draws, seed)
            if any(want is not None and want != got for want, got in zip(key, (n, meth, big_n, sd))):
                return None
            (n_k,) = struct.unpack("<I", fh.read(4))
            draws = {}
            for _ in range(n_k):
                (k,) = struct.unpack("<q", fh.read(8))
                buf = fh.read(8 * big_n)
                if len(buf) != 8 * big_n:
                    return None
                draws[int(k)] = np.frombuffer(buf, dtype="<f8").astype(np.float64)
    except (OSError, struct.error, UnicodeDecodeError):
        return None
    return NullSnrModel(n, meth, big_n, sd, draws)


def build_null_model(n_samples, group_sizes, p_threshold, method="gmm", seed=0, cache_dir=None):
    sizes = sorted({int(k) for k in group_sizes})
    for k in sizes:
        if not 1 <= k <= n_samples // 2:
            raise ValueError(f"group size {k} outside [1, {n_samples // 2}]")
    big_n = n_null_draws(p_threshold)
    model = None
    path = None
    if cache_dir is not None:
        path = _cache_path(cache_dir, n_samples, method, big_n, seed)
        model = load_null_model(path, n_samples, method, big_n, seed)
    if model is None:
        model = NullSnrModel(n_samples, method, big_n, seed)
    missing = [k for k in sizes if k not in model.draws]
    if missing:
        log.info("null model: %d draws for %d group sizes (n=%d)", big_n, len(missing), n_samples)
        model.draws.update(_generate_null(n_samples, missing, big_n, method, seed))
        if path is not None:
            os.makedirs(path.parent, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            save_null_model(tmp, model)
            os.replace(tmp, path)
    return model


def empirical_pvalue(model, k, observed_snr):
    if k not in model.draws:
        raise KeyError(f"null model has no draws for group size {k}")
    d = model.draws[k]
    n_ge = d.shape[0] - np.searchsorted(d, observed_snr, side="left")
    return (n_ge + 1.0) / (d.shape[0] + 1.0)


# Whole-matrix binarization


@dataclass(frozen=True)
class BinarizedFeature:
    feature_index: int
    minority: frozenset
    direction: str
    snr: float
    pvalue: float


@dataclass(frozen=True)
class BinarizationParams:
    method: str = "gmm"
    p_threshold: float = 0.01
    min_bicluster_size: int = 5
    master_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown binarization method {self.method!r}")
        if not 0 < self.p_threshold < 1:
            raise ValueError("p_threshold must lie in (0, 1)")
        if self.min_bicluster_size < 2:
            raise ValueError("min_bicluster_size must be >= 2")


@dataclass
class BinarizationResult:
    """Per-feature statistics for every row plus the retained features."""

    sizes: np.ndarray
    snr: np.ndarray
    pvalue: np.ndarray
    direction: np.ndarray
    retained: list

    @property
    def fraction_retained(self):
        return len(self.retained) / max(len(self.sizes), 1)


def binarize_matrix(z, params, cache_dir=None, threads=1):
    """Binarize all rows of a standardized matrix; see binarize_all."""
    x = z.values
    n_feat, n = x.shape
    n_s = params.min_bicluster_size
    if n < 2 * n_s:
        raise ValueError(f"{n} samples is fewer than 2 * min_bicluster_size = {2 * n_s}")
    high, valid = split_rows(x, params.method, threads=threads)
    minority, direction = orient(
        x, high, valid, lambda i: (params.master_seed, "feature", z.feature_ids[i])
    )
    sizes = minority.sum(axis=1)
    ok = valid & (sizes >= n_s)
    snrs = np.zeros(n_feat)
    if ok.any():
        snrs[ok] = snr_rows(x[ok], minority[ok])
    pvals = np.ones(n_feat)
    if ok.any():
        model = build_null_model(
            n, set(sizes[ok].tolist()), params.p_threshold, params.method, params.master_seed, cache_dir
        )
        for k in np.unique(sizes[ok]):
            rows = np.flatnonzero(ok & (sizes == k))
            d = model.draws[int(k)]
            n_ge = d.shape[0] - np.searchsorted(d, snrs[rows], side="left")
            pvals[rows] = (n_ge + 1.0) / (d.shape[0] + 1.0)
    keep = ok & (pvals <= params.p_threshold) & (snrs > 0)
    retained = [
        BinarizedFeature(
            feature_index=int(i),
            minority=frozenset(np.flatnonzero(minority[i]).tolist()),
            direction="up" if direction[i] > 0 else "down",
            snr=float(snrs[i]),
            pvalue=float(pvals[i]),
        )
        for i in np.flatnonzero(keep)
    ]
    log.info("binarization: %d of %d features passed p <= %g", len(retained), n_feat, params.p_threshold)
    return BinarizationResult(np.where(valid, sizes, 0), snrs, pvals, direction, retained)


def binarize_all(z, params, cache_dir=None, threads=1):
    """Retained BinarizedFeature list for a standardized matrix."""
    return binarize_matrix(z, params, cache_dir=cache_dir, threads=threads).retained
