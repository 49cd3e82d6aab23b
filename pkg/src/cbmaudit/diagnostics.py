"""Saliency-alignment statistics and diagnostics report assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .attribution import SaliencyMap, target_to_concept_importance
from .data import ConceptDataset, DataSplit
from .models import BottleneckModel, predict_concepts
from .probes import InterventionCurve, SweepTable

TOOLKIT_VERSION = "0.1.0"

ALIGNMENT_PAIRS = (("oracle", "sequential"), ("oracle", "joint"),
                   ("sequential", "joint"))


def saliency_r2(map_a: SaliencyMap, map_b: SaliencyMap) -> float:
    """Coefficient of determination of map_b against map_a (the reference).

    Asymmetric: map_a supplies the total sum of squares. May be negative.
    """
    a = map_a.values.ravel()
    b = map_b.values.ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ss_tot = float(((a - a.mean()) ** 2).sum())
    if ss_tot == 0:
        raise ValueError("reference map is constant; R^2 undefined")
    ss_res = float(((a - b) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass
class AlignmentStats:
    """Pairwise saliency R^2 between model roles, aggregated over test samples.

    ``pairs`` maps "a_vs_b" (a is the reference map) to mean/std across
    samples pooled over seeds; per-seed means give the across-seed spread.
    """

    pairs: dict  # name -> {mean, std, seed_means, rank_corr_mean}
    per_sample: dict  # name -> list of per-sample R^2 (pooled)
    method: str
    params: dict
    n_test_samples: int
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "method": self.method,
            "params": self.params,
            "n_test_samples": self.n_test_samples,
            "skipped": self.skipped,
        }


def _pair_name(a: str, b: str) -> str:
    return f"{a}_vs_{b}"


def oracle_alignment_report(model_triples, dataset: ConceptDataset,
                            split: DataSplit, method: str = "integrated_gradients",
                            params: dict | None = None,
                            n_samples: int = 50) -> AlignmentStats:
    """Pairwise R^2 between target-to-concept saliency of oracle/seq/joint models.

    ``model_triples`` is a list (one entry per seed) of dicts with keys
    "oracle", "sequential", "joint". The oracle model must be independently
    trained; its saliency is taken at the ground-truth concept input, the
    others at their own predicted concepts. The first model of each pair is
    the R^2 reference. A Spearman rank correlation is reported alongside as a
    normalization-free robustness column.
    """
    params = params or {}
    for triple in model_triples:
        if triple["oracle"].mode != "independent":
            raise ValueError("alignment oracle must be an independent model")
    te = split.test_indices[:n_samples]
    per_sample: dict = {_pair_name(a, b): [] for a, b in ALIGNMENT_PAIRS}
    per_seed: dict = {name: [] for name in per_sample}
    rank: dict = {name: [] for name in per_sample}
    skipped = 0
    c_true = None
    for triple in model_triples:
        oracle = triple["oracle"]
        enc = dataset.concepts_encoded()[te]
        if oracle.concept_offset is not None:
            enc = (enc - oracle.concept_offset) / oracle.concept_scale
        inputs = {
            "oracle": enc,
            "sequential": predict_concepts(triple["sequential"], dataset.inputs[te]),
            "joint": predict_concepts(triple["joint"], dataset.inputs[te]),
        }
        seed_vals: dict = {name: [] for name in per_sample}
        for si in range(len(te)):
            maps = {
                role: target_to_concept_importance(
                    triple[role], inputs[role][si], target_index=0,
                    method=method, params=params)
                for role in ("oracle", "sequential", "joint")
            }
            for a, b in ALIGNMENT_PAIRS:
                name = _pair_name(a, b)
                try:
                    r2 = saliency_r2(maps[a], maps[b])
                except ValueError:
                    skipped += 1
                    continue
                per_sample[name].append(r2)
                seed_vals[name].append(r2)
                rho = scipy_stats.spearmanr(maps[a].values.ravel(),
                                            maps[b].values.ravel()).statistic
                rank[name].append(float(rho) if np.isfinite(rho) else 0.0)
        for name, vals in seed_vals.items():
            if vals:
                per_seed[name].append(float(np.mean(vals)))
    pairs = {}
    for name, vals in per_sample.items():
        pairs[name] = {
            "mean": float(np.mean(vals)) if vals else float("nan"),
            "std": float(np.std(vals)) if vals else float("nan"),
            "seed_means": per_seed[name],
            "seed_std": float(np.std(per_seed[name])) if per_seed[name] else float("nan"),
            "rank_corr_mean": float(np.mean(rank[name])) if rank[name] else float("nan"),
        }
    return AlignmentStats(pairs=pairs, per_sample=per_sample, method=method,
                          params={k: v for k, v in params.items()
                                  if not hasattr(v, "resolve")},
                          n_test_samples=len(te), skipped=skipped)


@dataclass
class DiagnosticsReport:
    config_snapshot: dict
    sweep: SweepTable | None = None
    curves: dict = field(default_factory=dict)  # label -> InterventionCurve
    alignment: AlignmentStats | None = None
    metrics: dict = field(default_factory=dict)
    version: str = TOOLKIT_VERSION
    lineage: str = ""

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "lineage": self.lineage,
            "config_snapshot": self.config_snapshot,
            "sweep": self.sweep.to_dict() if self.sweep else None,
            "curves": {k: c.to_dict() for k, c in self.curves.items()},
            "alignment": self.alignment.to_dict() if self.alignment else None,
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        # canonical serialization: reruns of the same config must match bytes
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsReport":
        alignment = None
        if d.get("alignment"):
            a = d["alignment"]
            alignment = AlignmentStats(
                pairs=a["pairs"], per_sample={}, method=a["method"],
                params=a["params"], n_test_samples=a["n_test_samples"],
                skipped=a.get("skipped", 0))
        return cls(
            config_snapshot=d["config_snapshot"],
            sweep=SweepTable.from_dict(d["sweep"]) if d.get("sweep") else None,
            curves={k: InterventionCurve.from_dict(c)
                    for k, c in d.get("curves", {}).items()},
            alignment=alignment,
            metrics=d.get("metrics", {}),
            version=d.get("version", TOOLKIT_VERSION),
            lineage=d.get("lineage", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        return cls.from_dict(json.loads(text))


def assemble_report(config_snapshot: dict, lineage: str,
                    sweep: SweepTable | None = None,
                    curves: dict | None = None,
                    alignment: AlignmentStats | None = None,
                    metrics: dict | None = None,
                    component_lineages: list[str] | None = None) -> DiagnosticsReport:
    """Bundle diagnostics from one dataset/config lineage into a report."""
    for other in component_lineages or []:
        if other != lineage:
            raise ValueError(f"lineage mismatch: {other!r} != {lineage!r}")
    return DiagnosticsReport(
        config_snapshot=config_snapshot, lineage=lineage, sweep=sweep,
        curves=curves or {}, alignment=alignment, metrics=metrics or {})
