"""Mutual information estimators: MINE (Donsker-Varadhan) and histogram plug-in.

The histogram estimator is the non-differentiable measurement tool; a
soft-binned variant provides the differentiable training surrogate used by the
pairwise-MI regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class StatisticsNetConfig:
    """Architecture and optimization of the MINE statistics network T."""

    hidden: tuple[int, ...] = (64, 64)
    steps: int = 500
    lr: float = 5e-4
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        self.hidden = tuple(self.hidden)


class StatisticsNet(nn.Module):
    """T: (z_a, z_b) pair -> scalar score."""

    def __init__(self, dim_a: int, dim_b: int, hidden: tuple[int, ...]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = dim_a + dim_b
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, a, b):
        return self.net(torch.cat([a, b], dim=1)).squeeze(-1)


def dv_objective(t_joint: torch.Tensor, t_marginal: torch.Tensor) -> torch.Tensor:
    """Donsker-Varadhan lower bound: E_P[T] - log E_{PxP}[e^T] (logsumexp-stable)."""
    n = t_marginal.shape[0]
    return t_joint.mean() - (torch.logsumexp(t_marginal, dim=0) - np.log(n))


def train_statistics_net(z_a: np.ndarray, z_b: np.ndarray,
                         config: StatisticsNetConfig) -> StatisticsNet:
    """Fit T on paired samples; marginals come from within-batch permutation."""
    a = torch.as_tensor(np.asarray(z_a, dtype=np.float32))
    b = torch.as_tensor(np.asarray(z_b, dtype=np.float32))
    if a.ndim == 1:
        a = a.unsqueeze(1)
    if b.ndim == 1:
        b = b.unsqueeze(1)
    n = a.shape[0]
    if n < 64:
        raise ValueError(f"need at least 64 paired samples, got {n}")
    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    net = StatisticsNet(a.shape[1], b.shape[1], config.hidden)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    bs = min(config.batch_size, n)
    for step in range(config.steps):
        idx = torch.randperm(n, generator=gen)[:bs]
        perm = idx[torch.randperm(bs, generator=gen)]
        opt.zero_grad()
        loss = -dv_objective(net(a[idx], b[idx]), net(a[idx], b[perm]))
        if not torch.isfinite(loss):
            raise RuntimeError(f"MINE objective diverged at step {step}")
        loss.backward()
        opt.step()
    net.eval()
    return net


def dv_estimate(net: StatisticsNet, z_a, z_b, seed: int = 0,
                n_permutations: int = 8) -> float:
    """Evaluate the DV bound on the full sample, averaging over permutations."""
    a = torch.as_tensor(np.asarray(z_a, dtype=np.float32))
    b = torch.as_tensor(np.asarray(z_b, dtype=np.float32))
    if a.ndim == 1:
        a = a.unsqueeze(1)
    if b.ndim == 1:
        b = b.unsqueeze(1)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        t_joint = net(a, b)
        vals = []
        for _ in range(n_permutations):
            perm = torch.randperm(a.shape[0], generator=gen)
            vals.append(float(dv_objective(t_joint, net(a, b[perm]))))
    return float(np.mean(vals))


def mine_mi_estimate(z_a: np.ndarray, z_b: np.ndarray,
                     config: StatisticsNetConfig | None = None) -> float:
    """MINE estimate of I(z_a; z_b) in nats."""
    config = config or StatisticsNetConfig()
    net = train_statistics_net(z_a, z_b, config)
    return dv_estimate(net, z_a, z_b, seed=config.seed)


def _entropy(counts: np.ndarray) -> float:
    p = counts / counts.sum()
    p = p[p > 0]  # 0 log 0 = 0
    return float(-(p * np.log(p)).sum())


def histogram_mi(x: np.ndarray, y: np.ndarray, bins: int = 16) -> float:
    """Plug-in MI from a 2-D histogram: H(x) + H(y) - H(x, y), in nats."""
    joint, _, _ = np.histogram2d(np.asarray(x).ravel(), np.asarray(y).ravel(),
                                 bins=bins)
    return _entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0)) - _entropy(joint)


def pairwise_mi_histogram(samples: np.ndarray, bins: int = 16,
                          scope: str = "all_pairs", k: int = 0
                          ) -> tuple[np.ndarray, float]:
    """Pairwise plug-in MI matrix over the columns plus its ordered-pair sum.

    ``scope="new_only"`` restricts to columns at index >= k (the learned
    concepts of an extended bottleneck). The scalar sum counts ordered pairs,
    i.e. twice the sum over unordered pairs.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be (N, h)")
    n, h = samples.shape
    if n < 10 * bins ** 2:
        raise ValueError(f"need N >= 10 * bins^2 = {10 * bins ** 2}, got {n}")
    if scope == "new_only":
        cols = list(range(k, h))
    elif scope == "all_pairs":
        cols = list(range(h))
    else:
        raise ValueError(f"unknown scope {scope!r}")
    m = len(cols)
    mat = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            mat[i, j] = mat[j, i] = histogram_mi(samples[:, cols[i]],
                                                 samples[:, cols[j]], bins)
    return mat, float(mat.sum())


def soft_pairwise_mi(z: torch.Tensor, bins: int = 12, temperature: float = 0.5,
                     span: float = 3.0) -> torch.Tensor:
    """Differentiable pairwise MI surrogate via Gaussian soft binning.

    Columns are batch-standardized, assigned soft memberships over fixed bin
    centers in [-span, span], and the plug-in MI is computed from the soft
    joint histograms. Returns the ordered-pair sum over all column pairs.
    """
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError("z must be (N, h) with h >= 2")
    zs = (z - z.mean(dim=0)) / (z.std(dim=0) + 1e-6)
    centers = torch.linspace(-span, span, bins, dtype=z.dtype)
    # (N, h, bins) soft assignment
    logits = -((zs.unsqueeze(-1) - centers) ** 2) / (2 * temperature ** 2)
    a = torch.softmax(logits, dim=-1)
    n, h = z.shape
    eps = 1e-10
    total = z.new_zeros(())
    marg = a.mean(dim=0)  # (h, bins)
    h_marg = -(marg * torch.log(marg + eps)).sum(dim=1)
    for i in range(h):
        for j in range(i + 1, h):
            joint = a[:, i, :].t() @ a[:, j, :] / n
            h_joint = -(joint * torch.log(joint + eps)).sum()
            total = total + (h_marg[i] + h_marg[j] - h_joint)
    return 2 * total
