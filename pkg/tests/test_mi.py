import numpy as np
import pytest
import torch

from cbmaudit.mi import (StatisticsNetConfig, histogram_mi, mine_mi_estimate,
                         pairwise_mi_histogram, soft_pairwise_mi)


def test_mine_independent_blocks_near_zero():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5000, 2))
    b = rng.normal(size=(5000, 2))
    assert mine_mi_estimate(a, b, StatisticsNetConfig(seed=0)) < 0.05


def test_mine_gaussian_analytic():
    rho = 0.8
    true = -0.5 * np.log(1 - rho ** 2)
    rng = np.random.default_rng(1)
    xy = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=10_000)
    est = mine_mi_estimate(xy[:, 0], xy[:, 1], StatisticsNetConfig(seed=0))
    assert est == pytest.approx(true, rel=0.2)


def test_mine_discrete_copy_vs_plugin_entropy():
    # exact copy: MI equals the entropy of the 4-level distribution
    rng = np.random.default_rng(2)
    z = rng.integers(0, 4, size=5000).astype(np.float64)
    counts = np.bincount(z.astype(int))
    p = counts / counts.sum()
    entropy = -(p * np.log(p)).sum()
    est = mine_mi_estimate(z, z, StatisticsNetConfig(seed=0, steps=800))
    assert est >= 0.8 * entropy


def test_mine_needs_enough_samples():
    with pytest.raises(ValueError, match="64"):
        mine_mi_estimate(np.zeros(10), np.zeros(10))


def test_histogram_binary_copy_log2():
    rng = np.random.default_rng(3)
    z = rng.integers(0, 2, size=4000).astype(float)
    assert histogram_mi(z, z, bins=2) == pytest.approx(np.log(2), abs=0.02)


def test_histogram_independent_uniforms_small():
    rng = np.random.default_rng(4)
    mat, total = pairwise_mi_histogram(rng.uniform(size=(10_000, 3)), bins=16)
    off = mat[~np.eye(3, dtype=bool)]
    assert (off < 0.05).all()
    assert total == pytest.approx(2 * mat[np.triu_indices(3, 1)].sum())


def test_histogram_continuous_copy_close_to_marginal_entropy():
    # diagonal-histogram oracle: I(z, z) equals the binned marginal entropy
    rng = np.random.default_rng(5)
    z = rng.uniform(size=10_000)
    counts, _ = np.histogram(z, bins=16)
    p = counts / counts.sum()
    h = -(p[p > 0] * np.log(p[p > 0])).sum()
    mi = histogram_mi(z, z, bins=16)
    assert mi == pytest.approx(h, abs=1e-9)
    assert mi >= np.log(16) - 0.2  # uniform data fills the bins evenly


def test_histogram_plugin_bias_shrinks_with_n():
    rng = np.random.default_rng(6)
    vals = []
    for n in (1000, 10_000):
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        vals.append(histogram_mi(x, y, bins=8))
    assert vals[1] < vals[0]


def test_pairwise_scope_new_only():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(3000, 4))
    z[:, 3] = z[:, 2]  # the two "new" columns are identical
    mat_all, s_all = pairwise_mi_histogram(z, bins=8, scope="all_pairs")
    mat_new, s_new = pairwise_mi_histogram(z, bins=8, scope="new_only", k=2)
    assert mat_new.shape == (2, 2)
    assert s_new == pytest.approx(2 * mat_all[2, 3])
    assert mat_all[2, 3] > 1.0


def test_pairwise_sample_size_guard():
    with pytest.raises(ValueError, match="N >= 10"):
        pairwise_mi_histogram(np.zeros((100, 2)), bins=16)


def test_soft_pairwise_mi_orders_dependence():
    rng = np.random.default_rng(8)
    indep = torch.as_tensor(rng.normal(size=(2000, 2)))
    z1 = rng.normal(size=2000)
    dep = torch.as_tensor(np.stack([z1, z1 + 0.1 * rng.normal(size=2000)], axis=1))
    low = float(soft_pairwise_mi(indep))
    high = float(soft_pairwise_mi(dep))
    assert high > low + 0.5


def test_soft_pairwise_mi_differentiable():
    z = torch.randn(500, 3, requires_grad=True, dtype=torch.float64)
    val = soft_pairwise_mi(z)
    val.backward()
    assert torch.isfinite(z.grad).all()
