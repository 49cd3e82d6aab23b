"""Concept schemas and one-hot encoding/decoding of categorical concepts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

ENCODINGS = ("scalar", "one_hot")


@dataclass(frozen=True)
class ConceptSchema:
    """Ordered concept groups plus the layout of the bottleneck vector.

    Each group is a (name, cardinality) pair. Under ``one_hot`` encoding a
    group of cardinality m occupies m contiguous bottleneck units; under
    ``scalar`` encoding every group occupies exactly one unit regardless of
    cardinality (categorical values are represented as scalar reals).
    """

    groups: tuple[tuple[str, int], ...]
    encoding: str = "scalar"

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if not self.groups:
            raise ValueError("schema needs at least one concept group")
        names = [name for name, _ in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate group names in {names}")
        for name, card in self.groups:
            if card < 1:
                raise ValueError(f"group {name!r} has cardinality {card} < 1")
        object.__setattr__(self, "groups", tuple((str(n), int(c)) for n, c in self.groups))

    @property
    def k_groups(self) -> int:
        return len(self.groups)

    @property
    def k_expanded(self) -> int:
        if self.encoding == "one_hot":
            return sum(card for _, card in self.groups)
        return len(self.groups)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.groups)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(card for _, card in self.groups)

    def group_slices(self) -> list[slice]:
        """Contiguous bottleneck slice for each group, partitioning [0, k_expanded)."""
        slices, start = [], 0
        for _, card in self.groups:
            width = card if self.encoding == "one_hot" else 1
            slices.append(slice(start, start + width))
            start += width
        return slices

    def subset(self, group_indices: list[int]) -> "ConceptSchema":
        return ConceptSchema(
            groups=tuple(self.groups[i] for i in group_indices), encoding=self.encoding
        )

    def to_dict(self) -> dict:
        return {
            "groups": [{"name": n, "cardinality": c} for n, c in self.groups],
            "encoding": self.encoding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptSchema":
        return cls(
            groups=tuple((g["name"], g["cardinality"]) for g in d["groups"]),
            encoding=d.get("encoding", "scalar"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path) -> "ConceptSchema":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def one_hot_expand(concepts_raw: np.ndarray, schema: ConceptSchema) -> np.ndarray:
    """Expand N x k_groups category indices to the N x k_expanded indicator layout."""
    if schema.encoding != "one_hot":
        raise ValueError("one_hot_expand requires a one_hot schema")
    concepts_raw = np.asarray(concepts_raw)
    if concepts_raw.ndim != 2 or concepts_raw.shape[1] != schema.k_groups:
        raise ValueError(
            f"expected shape (N, {schema.k_groups}), got {concepts_raw.shape}"
        )
    n = concepts_raw.shape[0]
    out = np.zeros((n, schema.k_expanded), dtype=np.float64)
    for gi, ((name, card), sl) in enumerate(zip(schema.groups, schema.group_slices())):
        col = concepts_raw[:, gi]
        idx = np.rint(col).astype(np.int64)
        bad = np.flatnonzero((idx < 0) | (idx >= card) | (np.abs(col - idx) > 1e-9))
        if bad.size:
            raise ValueError(
                f"group {name!r}: category index {col[bad[0]]!r} out of range "
                f"[0, {card}) at row {bad[0]}"
            )
        out[np.arange(n), sl.start + idx] = 1.0
    return out


def one_hot_collapse(expanded: np.ndarray, schema: ConceptSchema) -> np.ndarray:
    """Collapse N x k_expanded reals back to category indices by per-group argmax.

    Ties go to the lowest index (numpy argmax convention).
    """
    if schema.encoding != "one_hot":
        raise ValueError("one_hot_collapse requires a one_hot schema")
    expanded = np.asarray(expanded, dtype=np.float64)
    if expanded.ndim != 2 or expanded.shape[1] != schema.k_expanded:
        raise ValueError(
            f"expected shape (N, {schema.k_expanded}), got {expanded.shape}"
        )
    cols = [expanded[:, sl].argmax(axis=1) for sl in schema.group_slices()]
    return np.stack(cols, axis=1).astype(np.int64)


def encode_concepts(concepts_raw: np.ndarray, schema: ConceptSchema) -> np.ndarray:
    """Map raw concepts to the bottleneck layout (one-hot expansion or identity)."""
    if schema.encoding == "one_hot":
        return one_hot_expand(concepts_raw, schema)
    return np.asarray(concepts_raw, dtype=np.float64).reshape(-1, schema.k_groups)
