"""Dataset container, file ingestion and deterministic splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .schema import ConceptSchema, encode_concepts

TASK_KINDS = ("regression", "classification")


@dataclass(frozen=True)
class ConceptDataset:
    """Aligned (inputs, concepts, targets) triples with their schema."""

    inputs: np.ndarray  # (N, d)
    concepts_raw: np.ndarray  # (N, k_groups), category indices or reals
    targets: np.ndarray  # (N,)
    schema: ConceptSchema
    task_kind: str = "regression"
    provenance: str = ""

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        concepts = np.asarray(self.concepts_raw, dtype=np.float64)
        targets = np.asarray(self.targets)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {inputs.shape}")
        if concepts.ndim != 2 or concepts.shape[1] != self.schema.k_groups:
            raise ValueError(
                f"concepts must be (N, {self.schema.k_groups}), got {concepts.shape}"
            )
        if targets.ndim != 1:
            raise ValueError("targets must be 1-D")
        n = inputs.shape[0]
        if n < 1 or concepts.shape[0] != n or targets.shape[0] != n:
            raise ValueError(
                f"row mismatch: inputs {n}, concepts {concepts.shape[0]}, "
                f"targets {targets.shape[0]}"
            )
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task_kind {self.task_kind!r}")
        if not np.isfinite(inputs).all():
            raise ValueError("non-finite values in inputs")
        if not np.isfinite(concepts).all():
            raise ValueError("non-finite values in concepts")
        if self.task_kind == "classification":
            targets = targets.astype(np.int64)
        else:
            targets = targets.astype(np.float64)
            if not np.isfinite(targets).all():
                raise ValueError("non-finite values in targets")
        if self.schema.encoding == "one_hot":
            for gi, (name, card) in enumerate(self.schema.groups):
                col = concepts[:, gi]
                if ((col < 0) | (col >= card)).any():
                    raise ValueError(f"group {name!r}: category value out of range")
        inputs.setflags(write=False)
        concepts.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "concepts_raw", concepts)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def concepts_encoded(self) -> np.ndarray:
        """Concepts in bottleneck layout: (N, k_expanded)."""
        return encode_concepts(self.concepts_raw, self.schema)

    def with_groups(self, group_indices: list[int]) -> "ConceptDataset":
        """Restrict the concept annotation to a subset of groups (inputs untouched)."""
        return ConceptDataset(
            inputs=self.inputs,
            concepts_raw=self.concepts_raw[:, group_indices],
            targets=self.targets,
            schema=self.schema.subset(group_indices),
            task_kind=self.task_kind,
            provenance=self.provenance,
        )


@dataclass(frozen=True)
class DataSplit:
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("train_indices", "val_indices", "test_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        parts = [self.train_indices, self.val_indices, self.test_indices]
        allidx = np.concatenate(parts)
        if allidx.size and (allidx.min() < 0):
            raise ValueError("negative split index")
        if len(np.unique(allidx)) != allidx.size:
            raise ValueError("split parts are not disjoint")

    def part(self, name: str) -> np.ndarray:
        return {"train": self.train_indices, "val": self.val_indices,
                "test": self.test_indices}[name]

    def to_dict(self) -> dict:
        return {
            "train_indices": self.train_indices.tolist(),
            "val_indices": self.val_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSplit":
        return cls(
            train_indices=np.asarray(d["train_indices"], dtype=np.int64),
            val_indices=np.asarray(d["val_indices"], dtype=np.int64),
            test_indices=np.asarray(d["test_indices"], dtype=np.int64),
            seed=d.get("seed", 0),
        )


def split_dataset(dataset: ConceptDataset, fractions: tuple[float, float, float],
                  seed: int) -> DataSplit:
    """Deterministic (train, val, test) split; stratified by class for classification."""
    ftr, fva, fte = fractions
    if min(ftr, fva, fte) < 0 or ftr + fva + fte > 1 + 1e-9:
        raise ValueError(f"bad fractions {fractions}")
    n = dataset.n
    rng = np.random.default_rng(seed)

    def sizes(m):
        n_tr = int(round(ftr * m))
        n_va = int(round(fva * m))
        n_te = int(round(fte * m))
        while n_tr + n_va + n_te > m:
            n_tr -= 1
        return n_tr, n_va, n_te

    if dataset.task_kind == "classification":
        tr, va, te = [], [], []
        for cls in np.unique(dataset.targets):
            idx = np.flatnonzero(dataset.targets == cls)
            idx = rng.permutation(idx)
            n_tr, n_va, n_te = sizes(idx.size)
            tr.append(idx[:n_tr])
            va.append(idx[n_tr:n_tr + n_va])
            te.append(idx[n_tr + n_va:n_tr + n_va + n_te])
        parts = tuple(np.sort(np.concatenate(p)) for p in (tr, va, te))
    else:
        perm = rng.permutation(n)
        n_tr, n_va, n_te = sizes(n)
        parts = (np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]),
                 np.sort(perm[n_tr + n_va:n_tr + n_va + n_te]))

    for frac, part, name in zip(fractions, parts, ("train", "val", "test")):
        if frac > 0 and part.size == 0:
            raise ValueError(f"{name} split empty at fraction {frac} with N={n}")
    return DataSplit(*parts, seed=seed)


def save_inputs(path, inputs: np.ndarray):
    """Write the dense input matrix container (.npz with a shape-carrying array)."""
    np.savez(path, inputs=np.asarray(inputs, dtype=np.float64))


def load_inputs(path) -> np.ndarray:
    with np.load(path) as z:
        if "inputs" not in z:
            raise ValueError(f"{path}: missing 'inputs' array")
        return z["inputs"].astype(np.float64)


def save_annotations(path, ids, concepts_raw: np.ndarray, targets: np.ndarray,
                     schema: ConceptSchema):
    """Write the delimited annotation table: id, one column per group, target."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *schema.group_names, "target"])
        for i, rid in enumerate(ids):
            w.writerow([rid, *(repr(float(v)) for v in concepts_raw[i]),
                        repr(float(targets[i]))])


def load_tabular_dataset(inputs_path, annotations_path, schema: ConceptSchema,
                         task_kind: str = "regression") -> ConceptDataset:
    """Join the input matrix with the annotation table on the id column.

    Annotation row order is irrelevant: the id column indexes into the input
    matrix rows. Missing, duplicate, or unknown ids are rejected.
    """
    inputs = load_inputs(inputs_path)
    with open(annotations_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{annotations_path}: empty file")
        expected = ["id", *schema.group_names, "target"]
        if header != expected:
            raise ValueError(
                f"{annotations_path}: header {header} does not match schema "
                f"columns {expected}"
            )
        rows = list(reader)
    n = inputs.shape[0]
    seen: dict[int, int] = {}
    concepts = np.zeros((n, schema.k_groups))
    targets = np.zeros(n)
    for rownum, row in enumerate(rows):
        if len(row) != len(expected):
            raise ValueError(f"{annotations_path}: row {rownum} has {len(row)} fields")
        rid = int(row[0])
        if rid in seen:
            raise ValueError(f"{annotations_path}: duplicate id {rid} at row {rownum}")
        if not 0 <= rid < n:
            raise ValueError(f"{annotations_path}: id {rid} has no input row")
        seen[rid] = rownum
        concepts[rid] = [float(v) for v in row[1:-1]]
        targets[rid] = float(row[-1])
    missing = sorted(set(range(n)) - set(seen))
    if missing:
        raise ValueError(f"{annotations_path}: no annotation for id {missing[0]}")
    return ConceptDataset(
        inputs=inputs, concepts_raw=concepts, targets=targets, schema=schema,
        task_kind=task_kind,
        provenance=f"tabular:{inputs_path}",
    )
