"""Saliency methods: plain gradients, integrated gradients, SmoothGrad.

``model_fn`` is any callable mapping a (B, d) float tensor to a (B, m) tensor.
All methods attribute a single output unit for a single input vector and are
deterministic given their seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .models import BottleneckModel, concept_activations
from .schema import ConceptSchema

METHODS = ("gradient", "integrated_gradients", "smoothgrad")


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "zeros"  # zeros | gaussian_noise | dataset_mean
    noise_std: float = 1.0
    seed: int = 0
    reference: np.ndarray | None = None  # mean vector for dataset_mean

    def __post_init__(self):
        if self.kind not in ("zeros", "gaussian_noise", "dataset_mean"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "gaussian_noise" and self.noise_std <= 0:
            raise ValueError("gaussian_noise baseline needs noise_std > 0")
        if self.kind == "dataset_mean" and self.reference is None:
            raise ValueError("dataset_mean baseline needs a reference vector")

    def resolve(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "zeros":
            return np.zeros_like(x)
        if self.kind == "dataset_mean":
            return np.broadcast_to(np.asarray(self.reference, dtype=np.float64),
                                   x.shape).copy()
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, self.noise_std, size=x.shape)

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "gaussian_noise":
            d["noise_std"] = self.noise_std
        return d


@dataclass
class SaliencyMap:
    values: np.ndarray
    method: str
    output_index: int
    baseline: dict | None = None
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.isfinite(self.values).all():
            bad = np.flatnonzero(~np.isfinite(self.values.ravel()))[0]
            raise ValueError(f"non-finite attribution at flat index {bad}")


def _single_grad(model_fn, x: torch.Tensor, output_index: int) -> torch.Tensor:
    x = x.clone().requires_grad_(True)
    out = model_fn(x.unsqueeze(0))[0, output_index]
    (grad,) = torch.autograd.grad(out, x)
    return grad


def gradient_saliency(model_fn, x: np.ndarray, output_index: int) -> SaliencyMap:
    """d output[output_index] / d x at the input point."""
    xt = torch.as_tensor(np.array(x, dtype=np.float64))
    grad = _single_grad(model_fn, xt, output_index)
    return SaliencyMap(values=grad.detach().numpy(), method="gradient",
                       output_index=output_index)


def integrated_gradients(model_fn, x: np.ndarray, baseline: BaselineSpec,
                         steps: int = 64, output_index: int = 0,
                         completeness_tol: float | None = None) -> SaliencyMap:
    """Midpoint-rule path integral of gradients from the baseline to x.

    The completeness residual |sum(values) - (F(x) - F(b))| is recorded in the
    map's params; exceeding ``completeness_tol`` sets a flag, never fails.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x, dtype=np.float64)
    b = baseline.resolve(x)
    xt = torch.as_tensor(x)
    bt = torch.as_tensor(b)
    alphas = (torch.arange(steps, dtype=torch.float64) + 0.5) / steps
    points = bt.unsqueeze(0) + alphas.unsqueeze(1) * (xt - bt).unsqueeze(0)
    points = points.clone().requires_grad_(True)
    out = model_fn(points)[:, output_index].sum()
    (grads,) = torch.autograd.grad(out, points)
    avg_grad = grads.mean(dim=0)
    values = ((xt - bt) * avg_grad).numpy()
    with torch.no_grad():
        fx = float(model_fn(xt.unsqueeze(0))[0, output_index])
        fb = float(model_fn(bt.unsqueeze(0))[0, output_index])
    residual = abs(values.sum() - (fx - fb))
    params = {"steps": steps, "completeness_residual": residual,
              "output_delta": fx - fb}
    if completeness_tol is not None:
        params["completeness_flag"] = bool(residual > completeness_tol)
    return SaliencyMap(values=values, method="integrated_gradients",
                       output_index=output_index, baseline=baseline.describe(),
                       params=params, seed=baseline.seed)


def smoothgrad(inner: str, model_fn, x: np.ndarray, noise_std: float,
               n_samples: int, seed: int, output_index: int = 0,
               **inner_kwargs) -> SaliencyMap:
    """Average of inner-method maps over Gaussian input perturbations."""
    if inner not in ("gradient", "integrated_gradients"):
        raise ValueError(f"unknown inner method {inner!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    maps = []
    # noise 0 must reduce to the inner method exactly, not up to the
    # round-off of averaging n identical maps
    for _ in range(1 if noise_std == 0 else n_samples):
        xp = x if noise_std == 0 else x + rng.normal(0.0, noise_std, size=x.shape)
        if inner == "gradient":
            m = gradient_saliency(model_fn, xp, output_index)
        else:
            m = integrated_gradients(model_fn, xp, output_index=output_index,
                                     **inner_kwargs)
        maps.append(m.values)
    return SaliencyMap(values=maps[0] if len(maps) == 1
                       else np.mean(maps, axis=0), method="smoothgrad",
                       output_index=output_index,
                       params={"inner": inner, "noise_std": noise_std,
                               "n_samples": n_samples, **inner_kwargs},
                       seed=seed)


def compute_map(method: str, model_fn, x: np.ndarray, output_index: int,
                params: dict | None = None) -> SaliencyMap:
    """Dispatch helper used by the higher-level attribution entry points."""
    params = dict(params or {})
    if method == "gradient":
        return gradient_saliency(model_fn, x, output_index)
    if method == "integrated_gradients":
        baseline = params.pop("baseline", BaselineSpec(kind="zeros"))
        return integrated_gradients(model_fn, x, baseline,
                                    output_index=output_index, **params)
    if method == "smoothgrad":
        inner = params.pop("inner", "gradient")
        return smoothgrad(inner, model_fn, x,
                          noise_std=params.pop("noise_std", 0.1),
                          n_samples=params.pop("n_samples", 25),
                          seed=params.pop("seed", 0),
                          output_index=output_index, **params)
    raise ValueError(f"unknown saliency method {method!r}")


def _g_fn(model: BottleneckModel):
    def fn(x):
        return model.g(x.to(torch.float32)).to(torch.float64)
    return fn


def _f_fn(model: BottleneckModel):
    def fn(c):
        return model.f(c.to(torch.float32)).to(torch.float64)
    return fn


def concept_to_input_saliency(model: BottleneckModel, x: np.ndarray,
                              group_index: int, method: str = "integrated_gradients",
                              params: dict | None = None) -> list[SaliencyMap]:
    """Attribute each bottleneck unit of one concept group back to input space.

    Returns one map per category (one-hot) or a singleton list (scalar).
    Attribution is taken on g's raw outputs (pre-softmax logits for one-hot).
    """
    if not 0 <= group_index < model.schema.k_groups:
        raise ValueError(f"group index {group_index} out of range")
    sl = model.schema.group_slices()[group_index]
    fn = _g_fn(model)
    return [compute_map(method, fn, x, unit, params)
            for unit in range(sl.start, sl.stop)]


def aggregate_group_saliency(maps: list[SaliencyMap], group_logits=None,
                             mode: str = "mean") -> SaliencyMap:
    """Combine per-category maps: plain mean or softmax-of-logits weighting."""
    if not maps:
        raise ValueError("empty map list")
    shapes = {m.values.shape for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent map shapes {shapes}")
    stack = np.stack([m.values for m in maps])
    if mode == "mean":
        values = stack.mean(axis=0)
    elif mode == "softmax_weighted":
        logits = np.asarray(group_logits, dtype=np.float64)
        if logits.shape != (len(maps),):
            raise ValueError(f"need {len(maps)} logits, got shape {logits.shape}")
        w = np.exp(logits - logits.max())
        w /= w.sum()
        values = np.tensordot(w, stack, axes=1)
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return SaliencyMap(values=values, method=maps[0].method, output_index=-1,
                       baseline=maps[0].baseline,
                       params={"aggregate": mode, "n_categories": len(maps)})


def target_to_concept_importance(model: BottleneckModel, concept_input: np.ndarray,
                                 target_index: int = 0,
                                 method: str = "integrated_gradients",
                                 params: dict | None = None) -> SaliencyMap:
    """Attribute f's target output with respect to its concept-layer input."""
    c = np.asarray(concept_input, dtype=np.float64).reshape(-1)
    if c.shape[0] != model.f.arch["in_dim"]:
        raise ValueError(f"expected {model.f.arch['in_dim']} concept units, "
                         f"got {c.shape[0]}")
    return compute_map(method, _f_fn(model), c, target_index, params)
