"""Extended bottlenecks (supervised + learned concepts) and diversity regularizers."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import ConceptDataset, DataSplit
from .mi import (StatisticsNetConfig, dv_objective, pairwise_mi_histogram,
                 soft_pairwise_mi, train_statistics_net)
from .models import (MLP, BottleneckModel, TrainConfig, _as_tensor, _seed_all,
                     _target_loss_fn)

REGULARIZERS = ("none", "mine_mi", "pairwise_mi_new", "angular", "orthogonality")
VECTOR_REPRESENTATIONS = ("last_layer_weights", "block_projection")

ARCCOS_CLAMP_EPS = 1e-6


@dataclass
class ExtendedBottleneckConfig:
    k: int  # supervised concept units
    h: int  # total bottleneck width
    regularizer: str = "none"
    reg_weight: float = 0.1
    alpha: float = 0.0  # weight of the angle-variance term
    vector_representation: str = "last_layer_weights"
    block_width: int = 4  # M, block_projection only
    use_abs_cos: bool = True  # non-obtuse angles via |cos|
    mine: StatisticsNetConfig = field(default_factory=StatisticsNetConfig)
    mi_bins: int = 12

    def __post_init__(self):
        if not self.h > self.k >= 1:
            raise ValueError(f"need h > k >= 1, got h={self.h}, k={self.k}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.vector_representation not in VECTOR_REPRESENTATIONS:
            raise ValueError(
                f"unknown vector_representation {self.vector_representation!r}")
        if self.reg_weight < 0 or self.alpha < 0:
            raise ValueError("reg_weight and alpha must be >= 0")
        if self.block_width < 1:
            raise ValueError("block_width must be >= 1")


@dataclass
class VectorRepresentation:
    vectors: np.ndarray  # (h, p)
    source: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValueError("vectors must be a nonempty (h, p) array")
        norms = np.linalg.norm(self.vectors, axis=1)
        if (norms == 0).any():
            raise ValueError(f"zero vector at index {int(np.argmin(norms))}")


def _pairwise_angles(vectors: torch.Tensor, use_abs_cos: bool) -> torch.Tensor:
    """Flattened off-diagonal (ordered pair) angles between the row vectors."""
    if vectors.shape[0] < 2:
        raise ValueError("need at least 2 vectors")
    norms = vectors.norm(dim=1)
    if (norms == 0).any():
        raise ValueError("zero vector has no direction")
    unit = vectors / norms.unsqueeze(1)
    cos = unit @ unit.t()
    if use_abs_cos:
        cos = cos.abs()
    cos = cos.clamp(-1 + ARCCOS_CLAMP_EPS, 1 - ARCCOS_CLAMP_EPS)
    theta = torch.arccos(cos)
    h = vectors.shape[0]
    mask = ~torch.eye(h, dtype=torch.bool)
    return theta[mask]


def angular_diversification_loss(rep, alpha: float = 0.0,
                                 use_abs_cos: bool = True) -> torch.Tensor:
    """Spread score: mean pairwise angle minus alpha times its variance.

    Higher means better spread; the training loss is the negation. Angles use
    |cos| by default so they stay non-obtuse; pass ``use_abs_cos=False`` for
    raw cosines.
    """
    vectors = _rep_tensor(rep)
    theta = _pairwise_angles(vectors, use_abs_cos)
    return theta.mean() - alpha * ((theta - theta.mean()) ** 2).mean()


def orthogonality_penalty(rep, use_abs_cos: bool = True) -> torch.Tensor:
    """Sum over ordered pairs of squared cosine similarity; 0 iff orthogonal."""
    vectors = _rep_tensor(rep)
    if vectors.shape[0] < 2:
        raise ValueError("need at least 2 vectors")
    norms = vectors.norm(dim=1)
    if (norms == 0).any():
        raise ValueError("zero vector has no direction")
    unit = vectors / norms.unsqueeze(1)
    cos = unit @ unit.t()
    h = vectors.shape[0]
    mask = ~torch.eye(h, dtype=torch.bool)
    return (cos[mask] ** 2).sum()


def _rep_tensor(rep) -> torch.Tensor:
    if isinstance(rep, VectorRepresentation):
        return torch.as_tensor(rep.vectors)
    if isinstance(rep, torch.Tensor):
        return rep
    return torch.as_tensor(np.asarray(rep, dtype=np.float64))


class BlockProjectionConceptPredictor(nn.Module):
    """g whose bottleneck comes from h blocks of width M sharing one projection.

    The trunk emits an (h * M)-wide intermediate layer; each concept value is
    beta^T block + b with (beta, b) shared across blocks.
    """

    def __init__(self, in_dim: int, hidden: tuple[int, ...], h: int, block_width: int):
        super().__init__()
        self.arch = {"in_dim": in_dim, "hidden": list(hidden), "out_dim": h,
                     "block_width": block_width, "kind": "block_projection"}
        self.h = h
        self.block_width = block_width
        self.trunk = MLP(in_dim, hidden, h * block_width)
        self.projection = nn.Linear(block_width, 1)

    def block_activations(self, x) -> torch.Tensor:
        return self.trunk(x).reshape(x.shape[0], self.h, self.block_width)

    def forward(self, x):
        return self.projection(self.block_activations(x)).squeeze(-1)

    @property
    def final_linear(self) -> nn.Linear:
        return self.trunk.final_linear


def extract_vector_representation(model: BottleneckModel,
                                  config: ExtendedBottleneckConfig,
                                  reference_inputs: np.ndarray | None = None
                                  ) -> VectorRepresentation:
    """Per-latent-unit vectors for the angular/orthogonality regularizers."""
    if config.vector_representation == "last_layer_weights":
        if isinstance(model.g, BlockProjectionConceptPredictor):
            raise ValueError("last_layer_weights requires a plain MLP g")
        layer = model.g.final_linear
        w = layer.weight.detach().numpy()
        b = layer.bias.detach().numpy().reshape(-1, 1)
        return VectorRepresentation(vectors=np.hstack([w, b]),
                                    source="last_layer_weights")
    if not isinstance(model.g, BlockProjectionConceptPredictor):
        raise ValueError("block_projection requires a block-projection g")
    if reference_inputs is None:
        raise ValueError("block_projection needs a reference batch")
    with torch.no_grad():
        acts = model.g.block_activations(_as_tensor(reference_inputs))
    return VectorRepresentation(vectors=acts.mean(dim=0).numpy(),
                                source="block_projection")


def _weight_vectors(g) -> torch.Tensor:
    layer = g.final_linear
    return torch.cat([layer.weight, layer.bias.unsqueeze(1)], dim=1)


def measure_new_unit_mi(model: BottleneckModel, inputs: np.ndarray, k: int,
                        bins: int = 12) -> float:
    """Histogram sum-MI among the learned (non-supervised) bottleneck units."""
    with torch.no_grad():
        z = model.g(_as_tensor(inputs)).numpy()
    _, total = pairwise_mi_histogram(z, bins=bins, scope="new_only", k=k)
    return total


def train_extended_joint(dataset: ConceptDataset, split: DataSplit,
                         ext_config: ExtendedBottleneckConfig, lam: float,
                         config: TrainConfig) -> BottleneckModel:
    """Joint training of a width-h bottleneck with a diversity regularizer.

    Only the first k units carry the concept loss; the regularizer acts on the
    whole bottleneck (vector representations) or on the learned units
    (MI-based). For ``mine_mi`` the statistics network is retrained at the
    start of every epoch on frozen bottleneck samples.
    """
    if ext_config.k != dataset.schema.k_expanded:
        raise ValueError(
            f"ext_config.k={ext_config.k} must equal the schema's expanded "
            f"width {dataset.schema.k_expanded}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    enc = dataset.concepts_encoded()
    tr, va = split.train_indices, split.val_indices
    k, h = ext_config.k, ext_config.h

    _seed_all(config.seed)
    if ext_config.vector_representation == "block_projection":
        g = BlockProjectionConceptPredictor(dataset.d, config.hidden_g, h,
                                            ext_config.block_width)
    else:
        g = MLP(dataset.d, config.hidden_g, h)
    out_dim = 1 if dataset.task_kind == "regression" else int(dataset.targets.max()) + 1
    f = MLP(h, config.hidden_f, out_dim)
    model = BottleneckModel(g=g, f=f, schema=dataset.schema, mode="extended_joint",
                            task_kind=dataset.task_kind, lam=lam)
    t_loss = _target_loss_fn(config)

    xt, ct, yt = _as_tensor(dataset.inputs[tr]), _as_tensor(enc[tr]), _as_tensor(dataset.targets[tr])
    xv, cv, yv = _as_tensor(dataset.inputs[va]), _as_tensor(enc[va]), _as_tensor(dataset.targets[va])
    params = list(g.parameters()) + list(f.parameters())
    opt = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    n = xt.shape[0]

    def reg_term(z: torch.Tensor, t_net) -> torch.Tensor:
        kind = ext_config.regularizer
        if kind == "none" or ext_config.reg_weight == 0:
            return z.new_zeros(())
        if kind == "pairwise_mi_new":
            return soft_pairwise_mi(z[:, k:], bins=ext_config.mi_bins)
        if kind == "mine_mi":
            perm = torch.randperm(z.shape[0], generator=gen)
            return dv_objective(t_net(z[:, :k], z[:, k:]),
                                t_net(z[:, :k], z[perm, k:]))
        vectors = _weight_vectors(g)
        if kind == "angular":
            return -angular_diversification_loss(vectors, alpha=ext_config.alpha,
                                                 use_abs_cos=ext_config.use_abs_cos)
        return orthogonality_penalty(vectors)

    log: dict = {"target_val_loss": [], "concept_val_loss": [], "reg": [],
                 "mi_estimate": []}
    if ext_config.regularizer in ("mine_mi", "pairwise_mi_new"):
        log["mi_estimate"].append(measure_new_unit_mi(
            model, dataset.inputs[tr], k, bins=ext_config.mi_bins))
    best_val = float("inf")
    best_state = (copy.deepcopy(g.state_dict()), copy.deepcopy(f.state_dict()))
    stale = 0
    for epoch in range(config.epochs):
        t_net = None
        if ext_config.regularizer == "mine_mi" and ext_config.reg_weight > 0:
            with torch.no_grad():
                z_frozen = g(xt).numpy()
            t_net = train_statistics_net(z_frozen[:, :k], z_frozen[:, k:],
                                         ext_config.mine)
            for p in t_net.parameters():
                p.requires_grad_(False)
        g.train(); f.train()
        perm = torch.randperm(n, generator=gen)
        epoch_reg = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            z = g(xt[idx])
            loss = t_loss(f(z), yt[idx])
            if lam > 0:
                loss = loss + lam * ((z[:, :k] - ct[idx]) ** 2).mean()
            reg = reg_term(z, t_net)
            loss = loss + ext_config.reg_weight * reg
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            epoch_reg += float(reg.detach())
            batches += 1
        g.eval(); f.eval()
        with torch.no_grad():
            zv = g(xv)
            vt = float(t_loss(f(zv), yv))
            vc = float(((zv[:, :k] - cv) ** 2).mean())
        log["target_val_loss"].append(vt)
        log["concept_val_loss"].append(vc)
        log["reg"].append(epoch_reg / max(batches, 1))
        if ext_config.regularizer in ("mine_mi", "pairwise_mi_new"):
            log["mi_estimate"].append(measure_new_unit_mi(
                model, dataset.inputs[tr], k, bins=ext_config.mi_bins))
        val = vt + lam * vc
        if val < best_val - 1e-7:
            best_val, stale = val, 0
            best_state = (copy.deepcopy(g.state_dict()), copy.deepcopy(f.state_dict()))
        else:
            stale += 1
            if stale > config.patience:
                break
    g.load_state_dict(best_state[0])
    f.load_state_dict(best_state[1])
    g.eval(); f.eval()
    model.training_log = log
    return model
