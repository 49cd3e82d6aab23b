"""Bottleneck models (concept predictor g, target predictor f) and trainers."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .data import ConceptDataset, DataSplit
from .schema import ConceptSchema

CHECKPOINT_VERSION = 1

MODES = ("independent", "sequential", "joint", "extended_joint")


def _seed_all(seed: int):
    torch.manual_seed(seed)
    torch.set_num_threads(1)


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int):
        super().__init__()
        self.arch = {"in_dim": in_dim, "hidden": list(hidden), "out_dim": out_dim}
        layers: list[nn.Module] = []
        prev = in_dim
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)

    @property
    def final_linear(self) -> nn.Linear:
        return self.net[-1]


@dataclass
class TrainConfig:
    concept_loss: str = "mse"  # mse | per_group_cross_entropy
    target_loss: str = "mse"  # mse | cross_entropy
    lr: float = 2e-3
    epochs: int = 150
    batch_size: int = 256
    seed: int = 0
    hidden_g: tuple[int, ...] = (64, 64)
    hidden_f: tuple[int, ...] = (64,)
    weight_decay: float = 1e-4
    patience: int = 25
    normalize_concepts: str = "identity"  # identity | zscore (scalar schemas only)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.concept_loss not in ("mse", "per_group_cross_entropy"):
            raise ValueError(f"unknown concept_loss {self.concept_loss!r}")
        if self.target_loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown target_loss {self.target_loss!r}")
        self.hidden_g = tuple(self.hidden_g)
        self.hidden_f = tuple(self.hidden_f)

    @classmethod
    def for_dataset(cls, dataset: ConceptDataset, **overrides) -> "TrainConfig":
        cfg = cls(**overrides)
        if dataset.schema.encoding == "one_hot":
            cfg.concept_loss = "per_group_cross_entropy"
        if dataset.task_kind == "classification":
            cfg.target_loss = "cross_entropy"
        return cfg

    def to_dict(self) -> dict:
        return {
            "concept_loss": self.concept_loss, "target_loss": self.target_loss,
            "lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size,
            "seed": self.seed, "hidden_g": list(self.hidden_g),
            "hidden_f": list(self.hidden_f), "weight_decay": self.weight_decay,
            "patience": self.patience, "normalize_concepts": self.normalize_concepts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["hidden_g"] = tuple(d.get("hidden_g", (64, 64)))
        d["hidden_f"] = tuple(d.get("hidden_f", (64,)))
        return cls(**d)


@dataclass
class BottleneckModel:
    g: MLP
    f: MLP
    schema: ConceptSchema
    mode: str
    task_kind: str = "regression"
    lam: float | None = None
    training_log: dict = field(default_factory=dict)
    concept_offset: np.ndarray | None = None  # z-score stats for scalar concepts
    concept_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("joint", "extended_joint") and self.lam is None:
            raise ValueError(f"{self.mode} model must record lambda")
        if self.f.arch["in_dim"] != self.g.arch["out_dim"]:
            raise ValueError("g output width must match f input width")

    @property
    def bottleneck_width(self) -> int:
        return self.g.arch["out_dim"]


def concept_activations(model: BottleneckModel, logits: torch.Tensor) -> torch.Tensor:
    """Bottleneck values f consumes: per-group softmax for one-hot, raw otherwise."""
    if model.schema.encoding != "one_hot":
        return logits
    if model.mode == "extended_joint":
        return logits  # extra learned units have no group structure
    parts = [torch.softmax(logits[:, sl], dim=1) for sl in model.schema.group_slices()]
    return torch.cat(parts, dim=1)


def encode_concept_targets(model_or_cfg, dataset: ConceptDataset) -> np.ndarray:
    """Concepts in the layout g is trained against, including scalar z-scoring."""
    enc = dataset.concepts_encoded()
    if isinstance(model_or_cfg, BottleneckModel):
        if model_or_cfg.concept_offset is not None:
            enc = (enc - model_or_cfg.concept_offset) / model_or_cfg.concept_scale
    return enc


def _concept_loss_fn(config: TrainConfig, schema: ConceptSchema):
    if config.concept_loss == "mse":
        return lambda logits, target: ((logits - target) ** 2).mean()
    slices = schema.group_slices()

    def per_group_ce(logits, target_onehot):
        loss = 0.0
        for sl in slices:
            loss = loss + nn.functional.cross_entropy(
                logits[:, sl], target_onehot[:, sl].argmax(dim=1))
        return loss / len(slices)

    return per_group_ce


def _target_loss_fn(config: TrainConfig):
    if config.target_loss == "mse":
        return lambda pred, y: ((pred.squeeze(-1) - y) ** 2).mean()
    return lambda pred, y: nn.functional.cross_entropy(pred, y.long())


def _as_tensor(a) -> torch.Tensor:
    # copy: dataset arrays are immutable (non-writable) numpy views
    return torch.as_tensor(np.array(a, dtype=np.float32))


def _fit(net: nn.Module, x: np.ndarray, t: np.ndarray, loss_fn, config: TrainConfig,
         x_val: np.ndarray, t_val: np.ndarray, seed: int) -> list[float]:
    """Minibatch Adam with early stopping on validation loss; deterministic."""
    _seed_all(seed)
    xt, tt = _as_tensor(x), _as_tensor(t)
    xv, tv = _as_tensor(x_val), _as_tensor(t_val)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr,
                           weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    n = xt.shape[0]
    best_val = float("inf")
    best_state = copy.deepcopy(net.state_dict())
    stale = 0
    log = []
    for epoch in range(config.epochs):
        net.train()
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            loss = loss_fn(net(xt[idx]), tt[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
        net.eval()
        with torch.no_grad():
            val = float(loss_fn(net(xv), tv))
        log.append(val)
        if val < best_val - 1e-7:
            best_val, stale = val, 0
            best_state = copy.deepcopy(net.state_dict())
        else:
            stale += 1
            if stale > config.patience:
                break
    net.load_state_dict(best_state)
    net.eval()
    return log


def _concept_norm_stats(dataset, split, config):
    if config.normalize_concepts != "zscore" or dataset.schema.encoding == "one_hot":
        return None, None
    enc = dataset.concepts_encoded()[split.train_indices]
    return enc.mean(axis=0), enc.std(axis=0) + 1e-12


def _prepared(dataset: ConceptDataset, split: DataSplit, config: TrainConfig):
    enc = dataset.concepts_encoded()
    off, scale = _concept_norm_stats(dataset, split, config)
    if off is not None:
        enc = (enc - off) / scale
    tr, va = split.train_indices, split.val_indices
    return enc, tr, va, off, scale


def _f_out_dim(dataset: ConceptDataset) -> int:
    if dataset.task_kind == "classification":
        return int(dataset.targets.max()) + 1
    return 1


def train_concept_predictor(dataset: ConceptDataset, split: DataSplit,
                            config: TrainConfig) -> tuple[MLP, list[float]]:
    """Fit g: inputs -> concepts on ground truth. Shared by independent/sequential."""
    enc, tr, va, _, _ = _prepared(dataset, split, config)
    _seed_all(config.seed)
    g = MLP(dataset.d, config.hidden_g, dataset.schema.k_expanded)
    log = _fit(g, dataset.inputs[tr], enc[tr],
               _concept_loss_fn(config, dataset.schema), config,
               dataset.inputs[va], enc[va], seed=config.seed)
    return g, log


def train_independent(dataset: ConceptDataset, split: DataSplit,
                      config: TrainConfig) -> BottleneckModel:
    """Fit g on ground-truth concepts and f on ground-truth concept inputs."""
    enc, tr, va, off, scale = _prepared(dataset, split, config)
    g, g_log = train_concept_predictor(dataset, split, config)
    _seed_all(config.seed + 1)
    f = MLP(dataset.schema.k_expanded, config.hidden_f, _f_out_dim(dataset))
    f_log = _fit(f, enc[tr], dataset.targets[tr], _target_loss_fn(config), config,
                 enc[va], dataset.targets[va], seed=config.seed + 1)
    return BottleneckModel(
        g=g, f=f, schema=dataset.schema, mode="independent",
        task_kind=dataset.task_kind,
        training_log={"concept_val_loss": g_log, "target_val_loss": f_log},
        concept_offset=off, concept_scale=scale)


def train_sequential(dataset: ConceptDataset, split: DataSplit,
                     config: TrainConfig) -> BottleneckModel:
    """Same g as the independent trainer; f fit on g's predicted concepts."""
    _, tr, va, off, scale = _prepared(dataset, split, config)
    g, g_log = train_concept_predictor(dataset, split, config)
    tmp = BottleneckModel(g=g, f=MLP(dataset.schema.k_expanded, (), 1),
                          schema=dataset.schema, mode="sequential",
                          task_kind=dataset.task_kind,
                          concept_offset=off, concept_scale=scale)
    with torch.no_grad():
        chat = concept_activations(tmp, g(_as_tensor(dataset.inputs))).numpy()
    _seed_all(config.seed + 1)
    f = MLP(dataset.schema.k_expanded, config.hidden_f, _f_out_dim(dataset))
    f_log = _fit(f, chat[tr], dataset.targets[tr], _target_loss_fn(config), config,
                 chat[va], dataset.targets[va], seed=config.seed + 1)
    return BottleneckModel(
        g=g, f=f, schema=dataset.schema, mode="sequential",
        task_kind=dataset.task_kind,
        training_log={"concept_val_loss": g_log, "target_val_loss": f_log},
        concept_offset=off, concept_scale=scale)


def train_joint(dataset: ConceptDataset, split: DataSplit, lam: float,
                config: TrainConfig) -> BottleneckModel:
    """Fit g and f simultaneously on L_t(f(g(x)), y) + lambda * L_c(g(x), c)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    enc, tr, va, off, scale = _prepared(dataset, split, config)
    _seed_all(config.seed)
    g = MLP(dataset.d, config.hidden_g, dataset.schema.k_expanded)
    f = MLP(dataset.schema.k_expanded, config.hidden_f, _f_out_dim(dataset))
    model = BottleneckModel(g=g, f=f, schema=dataset.schema, mode="joint",
                            task_kind=dataset.task_kind, lam=lam,
                            concept_offset=off, concept_scale=scale)
    c_loss = _concept_loss_fn(config, dataset.schema)
    t_loss = _target_loss_fn(config)

    xt = _as_tensor(dataset.inputs[tr])
    ct = _as_tensor(enc[tr])
    yt = _as_tensor(dataset.targets[tr])
    xv = _as_tensor(dataset.inputs[va])
    cv = _as_tensor(enc[va])
    yv = _as_tensor(dataset.targets[va])
    params = list(g.parameters()) + list(f.parameters())
    opt = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    n = xt.shape[0]
    best_val = float("inf")
    best_state = (copy.deepcopy(g.state_dict()), copy.deepcopy(f.state_dict()))
    stale = 0
    log_t, log_c = [], []
    for epoch in range(config.epochs):
        g.train(); f.train()
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            opt.zero_grad()
            logits = g(xt[idx])
            loss = t_loss(f(concept_activations(model, logits)), yt[idx])
            if lam > 0:
                loss = loss + lam * c_loss(logits, ct[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
        g.eval(); f.eval()
        with torch.no_grad():
            logits = g(xv)
            vt = float(t_loss(f(concept_activations(model, logits)), yv))
            vc = float(c_loss(logits, cv))
        log_t.append(vt)
        log_c.append(vc)
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
    model.training_log = {"target_val_loss": log_t, "concept_val_loss": log_c}
    return model


def predict_concepts(model: BottleneckModel, x_batch: np.ndarray) -> np.ndarray:
    """Bottleneck activations for a batch of inputs: (N, k_expanded)."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.g.arch["in_dim"]:
        raise ValueError(f"expected shape (N, {model.g.arch['in_dim']}), got {x.shape}")
    if x.shape[0] == 0:
        return np.zeros((0, model.bottleneck_width))
    with torch.no_grad():
        return concept_activations(model, model.g(_as_tensor(x))).numpy().astype(np.float64)


def predict_target_from_concepts(model: BottleneckModel, c_batch: np.ndarray) -> np.ndarray:
    """Apply f only; c_batch is in bottleneck layout."""
    c = np.asarray(c_batch, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != model.f.arch["in_dim"]:
        raise ValueError(f"expected shape (N, {model.f.arch['in_dim']}), got {c.shape}")
    if c.shape[0] == 0:
        return np.zeros((0,) if model.task_kind == "regression"
                        else (0, model.f.arch["out_dim"]))
    with torch.no_grad():
        out = model.f(_as_tensor(c)).numpy().astype(np.float64)
    return out[:, 0] if model.task_kind == "regression" else out


def predict_end_to_end(model: BottleneckModel, x_batch: np.ndarray) -> np.ndarray:
    return predict_target_from_concepts(model, predict_concepts(model, x_batch))


def evaluate(model: BottleneckModel, dataset: ConceptDataset, split_part: np.ndarray) -> dict:
    """Target and per-group concept metrics on the given index set."""
    idx = np.asarray(split_part, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    x = dataset.inputs[idx]
    y = dataset.targets[idx]
    pred = predict_end_to_end(model, x)
    metrics: dict = {}
    if model.task_kind == "regression":
        metrics["target_rmse"] = float(np.sqrt(np.mean((pred - y) ** 2)))
    else:
        metrics["target_error_rate"] = float(np.mean(pred.argmax(axis=1) != y))
    chat = predict_concepts(model, x)
    schema = model.schema
    slices = schema.group_slices()
    if schema.encoding == "one_hot":
        acc = {}
        for (name, _), sl, gi in zip(schema.groups, slices, range(schema.k_groups)):
            hard = chat[:, sl].argmax(axis=1)
            acc[name] = float(np.mean(hard == dataset.concepts_raw[idx, gi]))
        metrics["concept_accuracy"] = acc
    else:
        target_enc = encode_concept_targets(model, dataset)[idx]
        width = chat.shape[1]
        rmse = {}
        for gi, (name, _) in enumerate(schema.groups):
            if gi >= width:
                break
            rmse[name] = float(np.sqrt(np.mean((chat[:, gi] - target_enc[:, gi]) ** 2)))
        metrics["concept_rmse"] = rmse
    return metrics


def save_model(model: BottleneckModel, path):
    payload = {
        "version": CHECKPOINT_VERSION,
        "schema": model.schema.to_dict(),
        "mode": model.mode,
        "task_kind": model.task_kind,
        "lambda": model.lam,
        "g_arch": model.g.arch,
        "f_arch": model.f.arch,
        "g_state": model.g.state_dict(),
        "f_state": model.f.state_dict(),
        "training_log": model.training_log,
        "concept_offset": model.concept_offset,
        "concept_scale": model.concept_scale,
    }
    torch.save(payload, path)


def load_model(path) -> BottleneckModel:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    g = MLP(payload["g_arch"]["in_dim"], tuple(payload["g_arch"]["hidden"]),
            payload["g_arch"]["out_dim"])
    f = MLP(payload["f_arch"]["in_dim"], tuple(payload["f_arch"]["hidden"]),
            payload["f_arch"]["out_dim"])
    g.load_state_dict(payload["g_state"])
    f.load_state_dict(payload["f_state"])
    g.eval(); f.eval()
    return BottleneckModel(
        g=g, f=f, schema=ConceptSchema.from_dict(payload["schema"]),
        mode=payload["mode"], task_kind=payload["task_kind"], lam=payload["lambda"],
        training_log=payload["training_log"],
        concept_offset=payload["concept_offset"],
        concept_scale=payload["concept_scale"])
