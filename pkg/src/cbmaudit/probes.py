"""Desiderata checks: concept oracle, single-concept sweep, interventions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ConceptDataset, DataSplit
from .models import (BottleneckModel, TrainConfig, encode_concept_targets, evaluate,
                     predict_concepts, predict_end_to_end,
                     predict_target_from_concepts, train_independent, train_joint,
                     train_sequential)
from .schema import encode_concepts

SWEEP_MODES = ("joint", "sequential", "independent", "oracle")


def oracle_predict(model: BottleneckModel, c_true_raw: np.ndarray) -> np.ndarray:
    """Apply f to ground-truth concepts: the concept-oracle predictions.

    Oracle semantics require f from an independently trained model; any other
    mode triggers a warning but still evaluates.
    """
    if model.mode != "independent":
        warnings.warn(
            f"concept oracle expects an independent model's f, got {model.mode!r}",
            stacklevel=2)
    c = np.asarray(c_true_raw, dtype=np.float64)
    if c.shape[0] == 0:
        return predict_target_from_concepts(model, c.reshape(0, model.f.arch["in_dim"]))
    enc = encode_concepts(c, model.schema)
    if model.concept_offset is not None:
        enc = (enc - model.concept_offset) / model.concept_scale
    return predict_target_from_concepts(model, enc)


def _target_error(model: BottleneckModel, pred: np.ndarray, y: np.ndarray) -> float:
    if model.task_kind == "regression":
        return float(np.sqrt(np.mean((pred - y) ** 2)))
    return float(np.mean(pred.argmax(axis=1) != y))


@dataclass
class SweepTable:
    """Per-mode, per-concept target errors; last column is "all concepts"."""

    columns: list[str]  # concept names + "all"
    cells: dict  # mode -> list of per-seed error lists, one list per column
    seeds: list[int]

    def mean(self, mode: str) -> list[float]:
        return [float(np.mean(c)) if len(c) else float("nan")
                for c in self.cells[mode]]

    def std(self, mode: str) -> list[float]:
        return [float(np.std(c)) if len(c) else float("nan")
                for c in self.cells[mode]]

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "seeds": self.seeds,
            "cells": {m: [list(map(float, c)) for c in cols]
                      for m, cols in self.cells.items()},
            "mean": {m: self.mean(m) for m in self.cells},
            "std": {m: self.std(m) for m in self.cells},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepTable":
        return cls(columns=list(d["columns"]), cells=d["cells"],
                   seeds=list(d["seeds"]))


def single_concept_sweep(dataset: ConceptDataset, split: DataSplit,
                         config: TrainConfig, seeds: list[int],
                         lam: float = 0.1) -> SweepTable:
    """Width-1 bottleneck comparison across concepts, modes and seeds.

    For every concept group the bottleneck is restricted to that group alone
    and joint / sequential / independent CBMs are trained from scratch; the
    oracle row applies the independent f to the ground-truth concept. The last
    column repeats the comparison with the full concept set.
    """
    if dataset.schema.k_groups < 2:
        raise ValueError("sweep needs at least two concept groups")
    if not seeds:
        raise ValueError("sweep needs at least one seed")
    columns = list(dataset.schema.group_names) + ["all"]
    cells = {m: [[] for _ in columns] for m in SWEEP_MODES}
    group_sets = [[gi] for gi in range(dataset.schema.k_groups)]
    group_sets.append(list(range(dataset.schema.k_groups)))

    te = split.test_indices
    for seed in seeds:
        for col, groups in enumerate(group_sets):
            sub = dataset.with_groups(groups)
            cfg = replace(config, seed=seed)
            try:
                ind = train_independent(sub, split, cfg)
                seq = train_sequential(sub, split, cfg)
                jnt = train_joint(sub, split, lam, cfg)
            except RuntimeError as exc:
                warnings.warn(f"sweep cell ({seed}, {columns[col]}) failed: {exc}",
                              stacklevel=2)
                continue
            y = sub.targets[te]
            for mode, model in (("joint", jnt), ("sequential", seq),
                                ("independent", ind)):
                pred = predict_end_to_end(model, sub.inputs[te])
                cells[mode][col].append(_target_error(model, pred, y))
            pred = oracle_predict(ind, sub.concepts_raw[te])
            cells["oracle"][col].append(_target_error(ind, pred, y))
    return SweepTable(columns=columns, cells=cells, seeds=list(seeds))


def intervene(model: BottleneckModel, x_batch: np.ndarray,
              c_true_raw: np.ndarray, group_indices: list[int]) -> np.ndarray:
    """Predict after replacing whole concept-group slices with ground truth.

    One-hot groups are replaced by the full indicator vector, never a single
    logit; scalar groups by the true scalar value.
    """
    for gi in group_indices:
        if not 0 <= gi < model.schema.k_groups:
            raise ValueError(f"invalid group index {gi}")
    chat = predict_concepts(model, x_batch)
    if group_indices:
        enc = encode_concepts(np.asarray(c_true_raw, dtype=np.float64), model.schema)
        if model.concept_offset is not None:
            enc = (enc - model.concept_offset) / model.concept_scale
        slices = model.schema.group_slices()
        chat = chat.copy()
        for gi in group_indices:
            chat[:, slices[gi]] = enc[:, slices[gi]]
    return predict_target_from_concepts(model, chat)


@dataclass
class InterventionCurve:
    points: list[tuple[int, float]]  # (num groups intervened, test error)
    ordering: str
    seeds: list[int]
    orders: list[list[int]] = field(default_factory=list)  # recorded per seed

    def to_dict(self) -> dict:
        return {"points": [[int(m), float(e)] for m, e in self.points],
                "ordering": self.ordering, "seeds": [int(s) for s in self.seeds],
                "orders": [[int(g) for g in o] for o in self.orders]}

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionCurve":
        return cls(points=[(p[0], p[1]) for p in d["points"]],
                   ordering=d["ordering"], seeds=list(d["seeds"]),
                   orders=[list(o) for o in d.get("orders", [])])


def intervention_curve(model: BottleneckModel, dataset: ConceptDataset,
                       split: DataSplit, ordering: str = "random",
                       seeds: list[int] = (0,)) -> InterventionCurve:
    """Test error as progressively more concept groups are set to ground truth."""
    if ordering not in ("random", "fixed"):
        raise ValueError(f"unknown ordering {ordering!r}")
    te = split.test_indices
    x = dataset.inputs[te]
    c = dataset.concepts_raw[te]
    y = dataset.targets[te]
    k = dataset.schema.k_groups
    orders = []
    for seed in seeds:
        if ordering == "fixed":
            orders.append(list(range(k)))
        else:
            orders.append([int(g) for g in np.random.default_rng(seed).permutation(k)])
    points = []
    for m in range(k + 1):
        errs = [
            _target_error(model, intervene(model, x, c, order[:m]), y)
            for order in orders
        ]
        points.append((m, float(np.mean(errs))))
    return InterventionCurve(points=points, ordering=ordering,
                             seeds=list(seeds), orders=orders)
