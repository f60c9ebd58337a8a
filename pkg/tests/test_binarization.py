import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debicluster import binarization as B
from debicluster.binarization import (
    SNR_CAP,
    BinarizationParams,
    binarize_all,
    binarize_feature,
    binarize_matrix,
    build_null_model,
    empirical_pvalue,
    load_null_model,
    n_null_draws,
    snr,
    split_rows,
)
from debicluster.dataio import zscore_rows

from conftest import make_matrix


def snr_oracle(values, subset):
    inside = [v for i, v in enumerate(values) if i in subset]
    outside = [v for i, v in enumerate(values) if i not in subset]

    def mean(v):
        return sum(v) / len(v)

    def pstd(v):
        mu = mean(v)
        return (sum((x - mu) ** 2 for x in v) / len(v)) ** 0.5

    return abs(mean(inside) - mean(outside)) / (pstd(inside) + pstd(outside))


def test_snr_example():
    # 8.5 / (0.8165 + 0.5)
    assert snr([1, 2, 1, 2, 9, 10, 11], {4, 5, 6}) == pytest.approx(6.456, abs=1e-3)


def test_snr_degenerate():
    assert snr([1, 2, 1, 2], {0, 1}) == 0.0
    assert snr([0, 0, 0, 7, 7], {3, 4}) == SNR_CAP
    with pytest.raises(ValueError):
        snr([1, 2, 3], set())
    with pytest.raises(ValueError):
        snr([1, 2, 3], {0, 1, 2})


def test_snr_oracle_and_affine(rng):
    for _ in range(1000):
        n = int(rng.integers(4, 60))
        v = rng.normal(size=n) * rng.uniform(0.1, 10)
        k = int(rng.integers(1, n))
        sub = set(rng.choice(n, size=k, replace=False).tolist())
        s = snr(v, sub)
        assert s == pytest.approx(snr_oracle(v.tolist(), sub), abs=1e-12, rel=1e-12)
        a, b = rng.uniform(0.01, 100), rng.uniform(-50, 50)
        assert snr(a * v + b, sub) == pytest.approx(s, abs=1e-9, rel=1e-9)


def test_snr_rows_matches_scalar(rng):
    x = rng.normal(size=(30, 25))
    mask = rng.random((30, 25)) < 0.3
    mask[:, 0] = True
    mask[:, 1] = False
    got = B.snr_rows(x, mask)
    want = [snr(x[i], np.flatnonzero(mask[i])) for i in range(30)]
    assert np.allclose(got, want, atol=1e-12)


def two_means_oracle(v):
    """Exhaustive threshold search minimizing within-group sum of squares."""
    s = sorted(set(v))
    best = None
    for t in s[:-1]:
        lo = [x for x in v if x <= t]
        hi = [x for x in v if x > t]
        sse = sum((x - np.mean(lo)) ** 2 for x in lo) + sum((x - np.mean(hi)) ** 2 for x in hi)
        if best is None or sse < best[0] - 1e-9:
            best = (sse, t)
    return np.array(v) > best[1]


def test_two_means_exhaustive_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(4, 30))
        v = np.round(rng.normal(size=n) * 3, 1)
        if len(set(v)) < 2:
            continue
        high, valid = split_rows(v[None, :], "two_means")
        assert valid[0]
        assert np.array_equal(high[0], two_means_oracle(v.tolist()))


@pytest.mark.parametrize("method", B.METHODS)
def test_point_masses(method):
    idx, direction = binarize_feature([0, 0, 0, 0, 10, 10], method)
    assert idx.tolist() == [4, 5] and direction == "up"


def test_two_means_down_example():
    idx, direction = binarize_feature([-5] * 4 + [0] * 6, "two_means")
    assert idx.tolist() == [0, 1, 2, 3] and direction == "down"


@pytest.mark.parametrize("method", B.METHODS)
def test_size_tie_coin(method):
    seen = set()
    for seed in range(40):
        idx, direction = binarize_feature([0, 0, 0, 10, 10, 10], method, seed=seed)
        assert idx.tolist() in ([0, 1, 2], [3, 4, 5])
        assert direction == ("up" if idx.tolist() == [3, 4, 5] else "down")
        again = binarize_feature([0, 0, 0, 10, 10, 10], method, seed=seed)
        assert again[0].tolist() == idx.tolist()
        seen.add(direction)
    assert seen == {"up", "down"}


def test_constant_feature_unbinarizable():
    assert binarize_feature([3.0] * 8) is None


@pytest.mark.parametrize("method", B.METHODS)
def test_sign_equivariance(method, rng):
    for _ in range(20):
        v = np.concatenate([rng.normal(size=25), rng.normal(3, 1, size=8)])
        a = binarize_feature(v, method)
        b = binarize_feature(-v, method)
        assert a[0].tolist() == b[0].tolist()
        assert {a[1], b[1]} == {"up", "down"}


def test_gmm_numpy_and_compiled_agree(rng):
    if B._em_kernel_jit is None:
        pytest.skip("numba not installed")
    x = np.vstack([rng.normal(size=(100, 80)), np.hstack([rng.normal(size=(100, 70)), rng.normal(4, 1, (100, 10))])])
    h1, v1 = B._split_gmm(x)
    h2, v2 = B._split_gmm_numpy(x)
    assert np.array_equal(v1, v2)
    assert (h1 == h2).all(axis=1).mean() >= 0.99


def test_gmm_matches_sklearn_on_bimodal(rng):
    mixture = pytest.importorskip("sklearn.mixture")
    for _ in range(10):
        v = np.concatenate([rng.normal(0, 1, 150), rng.normal(5, 1, 50)])
        high, _ = split_rows(v[None, :], "gmm")
        gm = mixture.GaussianMixture(2, random_state=0).fit(v[:, None])
        lab = gm.predict(v[:, None])
        ref = lab == np.argmax(gm.means_.ravel())
        assert (high[0] == ref).mean() >= 0.99


def test_ward_matches_sklearn(rng):
    cluster = pytest.importorskip("sklearn.cluster")
    for _ in range(10):
        v = np.concatenate([rng.normal(0, 1, 60), rng.normal(6, 1, 15)])
        high, _ = split_rows(v[None, :], "ward")
        lab = cluster.AgglomerativeClustering(2, linkage="ward").fit_predict(v[:, None])
        ref = lab == lab[np.argmax(v)]
        assert np.array_equal(high[0], ref)


def test_null_draw_counts():
    assert n_null_draws(0.01) == 10000
    assert n_null_draws(1e-5) == 1_000_000
    assert n_null_draws(0.5) == 10000


@pytest.fixture(scope="module")
def null_model():
    return build_null_model(100, {5, 20, 50}, 0.01, "two_means", seed=3)


def test_null_model_shape(null_model):
    assert null_model.n_draws == 10000
    for k, d in null_model.draws.items():
        assert d.shape == (10000,)
        assert np.all(np.diff(d) >= 0) and d[0] >= 0


def test_null_model_matches_direct_simulation(null_model):
    # top-k order statistics of standard normals, computed the slow way
    rng = np.random.default_rng(0)
    direct = []
    for _ in range(2000):
        z = np.sort(rng.standard_normal(100))
        direct.append(snr(z, range(80, 100)))
    q = np.quantile(direct, [0.1, 0.5, 0.9])
    q_model = np.quantile(null_model.draws[20], [0.1, 0.5, 0.9])
    assert np.allclose(q, q_model, rtol=0.03)


def test_empirical_pvalue_boundaries(null_model):
    d = null_model.draws[20]
    assert empirical_pvalue(null_model, 20, d[-1] + 1) == pytest.approx(1 / 10001)
    assert empirical_pvalue(null_model, 20, d[0] - 1) == 1.0
    assert abs(empirical_pvalue(null_model, 20, np.median(d)) - 0.5) <= 2 / 10000
    with pytest.raises(KeyError):
        empirical_pvalue(null_model, 7, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5))
def test_empirical_pvalue_monotone(null_model, a, b):
    lo, hi = sorted((a, b))
    assert empirical_pvalue(null_model, 50, hi) <= empirical_pvalue(null_model, 50, lo)


def test_null_median_decreases_with_n():
    med = [np.median(build_null_model(n, {n // 10}, 0.01, seed=1).draws[n // 10]) for n in (50, 200, 800)]
    assert med[0] > med[1] > med[2]


def test_null_cache(tmp_path):
    m1 = build_null_model(60, {5, 10}, 0.01, "gmm", seed=2, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    m2 = build_null_model(60, {5, 10, 15}, 0.01, "gmm", seed=2, cache_dir=tmp_path)
    assert np.array_equal(m1.draws[10], m2.draws[10])
    m3 = load_null_model(files[0], 60, "gmm", 10000, 2)
    assert sorted(m3.draws) == [5, 10, 15]
    assert load_null_model(files[0], 61, "gmm", 10000, 2) is None
    assert load_null_model(files[0], 60, "ward", 10000, 2) is None
    files[0].write_bytes(b"garbage")
    assert load_null_model(files[0]) is None
    m4 = build_null_model(60, {5}, 0.01, "gmm", seed=2, cache_dir=tmp_path)
    assert np.array_equal(m4.draws[5], m1.draws[5])


def test_null_sizes_validated():
    with pytest.raises(ValueError):
        build_null_model(20, {11}, 0.01)


def test_params_validation():
    with pytest.raises(ValueError):
        BinarizationParams(method="kmeans")
    with pytest.raises(ValueError):
        BinarizationParams(p_threshold=0)
    with pytest.raises(ValueError):
        BinarizationParams(min_bicluster_size=1)


def _planted_feature_matrix(rng):
    x = rng.standard_normal((40, 200))
    x[0, 30:50] += 4
    x[1, :3] += 20
    return make_matrix(x)


@pytest.mark.parametrize("method", B.METHODS)
def test_planted_feature_retained(method, rng):
    m = _planted_feature_matrix(rng)
    kept = {f.feature_index: f for f in binarize_all(zscore_rows(m), BinarizationParams(method=method))}
    assert 0 in kept
    # a few background samples may cross the split point of a +4 sd shift
    planted = frozenset(range(30, 50))
    jac = len(kept[0].minority & planted) / len(kept[0].minority | planted)
    assert jac >= (0.8 if method == "gmm" else 0.6)
    assert kept[0].direction == "up"
    assert 1 not in kept  # three-sample split is below n_s
    for f in kept.values():
        assert 5 <= len(f.minority) <= 100 and f.pvalue <= 0.01 and f.snr > 0


def test_noise_pass_rate_two_means():
    rng = np.random.default_rng(7)
    m = make_matrix(rng.standard_normal((3000, 200)))
    res = binarize_matrix(zscore_rows(m), BinarizationParams(method="two_means", master_seed=7))
    assert res.fraction_retained <= 0.03


def test_threads_and_order_do_not_matter(rng):
    x = rng.standard_normal((2500, 60))
    x[:50, :10] += 3
    m = make_matrix(x)
    p = BinarizationParams(method="gmm", master_seed=4)
    a = binarize_all(zscore_rows(m), p, threads=1)
    b = binarize_all(zscore_rows(m), p, threads=3)
    assert a == b
    perm = rng.permutation(2500)
    c = binarize_all(zscore_rows(m.take_features(perm)), p)
    relabel = {perm[f.feature_index]: (f.minority, f.direction) for f in c}
    assert relabel == {f.feature_index: (f.minority, f.direction) for f in a}
