import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbmaudit.data import (ConceptDataset, load_tabular_dataset, save_annotations,
                           save_inputs, split_dataset)
from cbmaudit.schema import (ConceptSchema, encode_concepts, one_hot_collapse,
                             one_hot_expand)


def test_expand_single_group():
    schema = ConceptSchema(groups=(("wing", 3),), encoding="one_hot")
    out = one_hot_expand(np.array([[2]]), schema)
    assert out.tolist() == [[0.0, 0.0, 1.0]]


def test_expand_two_groups():
    schema = ConceptSchema(groups=(("a", 2), ("b", 3)), encoding="one_hot")
    out = one_hot_expand(np.array([[1, 0]]), schema)
    assert out.tolist() == [[0, 1, 1, 0, 0]]


def test_expand_rejects_out_of_range():
    schema = ConceptSchema(groups=(("a", 2),), encoding="one_hot")
    with pytest.raises(ValueError, match="'a'.*row 1"):
        one_hot_expand(np.array([[0], [5]]), schema)


def test_collapse_argmax_and_ties():
    schema = ConceptSchema(groups=(("a", 3),), encoding="one_hot")
    assert one_hot_collapse(np.array([[0.1, 0.7, 0.2]]), schema).tolist() == [[1]]
    schema2 = ConceptSchema(groups=(("a", 2),), encoding="one_hot")
    assert one_hot_collapse(np.array([[0.5, 0.5]]), schema2).tolist() == [[0]]


def test_expand_collapse_bijection_exhaustive():
    # oracle: enumerate every category combination at small cardinalities
    schema = ConceptSchema(groups=(("a", 2), ("b", 3), ("c", 4)), encoding="one_hot")
    combos = np.array(list(itertools.product(range(2), range(3), range(4))))
    assert one_hot_collapse(one_hot_expand(combos, schema), schema).tolist() \
        == combos.tolist()


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2)), min_size=1,
                max_size=30))
def test_expand_rows_sum_one_per_group(rows):
    schema = ConceptSchema(groups=(("a", 2), ("b", 3)), encoding="one_hot")
    out = one_hot_expand(np.array(rows), schema)
    for sl in schema.group_slices():
        assert np.allclose(out[:, sl].sum(axis=1), 1.0)


def test_schema_invariants():
    schema = ConceptSchema(groups=(("a", 2), ("b", 3)), encoding="one_hot")
    assert schema.k_groups == 2
    assert schema.k_expanded == 5
    slices = schema.group_slices()
    assert [s.start for s in slices] == [0, 2]
    assert slices[-1].stop == schema.k_expanded
    scalar = ConceptSchema(groups=(("a", 2), ("b", 3)), encoding="scalar")
    assert scalar.k_expanded == 2
    with pytest.raises(ValueError, match="duplicate"):
        ConceptSchema(groups=(("a", 2), ("a", 3)))
    with pytest.raises(ValueError, match="cardinality"):
        ConceptSchema(groups=(("a", 0),))


def test_schema_yaml_round_trip(tmp_path):
    schema = ConceptSchema(groups=(("a", 2), ("b", 3)), encoding="one_hot")
    schema.save(tmp_path / "schema.yaml")
    assert ConceptSchema.load(tmp_path / "schema.yaml") == schema


def test_dataset_validation():
    schema = ConceptSchema(groups=(("a", 1),), encoding="scalar")
    with pytest.raises(ValueError, match="row mismatch"):
        ConceptDataset(inputs=np.zeros((3, 2)), concepts_raw=np.zeros((2, 1)),
                       targets=np.zeros(3), schema=schema)
    with pytest.raises(ValueError, match="non-finite"):
        ConceptDataset(inputs=np.array([[np.nan, 0.0]]),
                       concepts_raw=np.zeros((1, 1)), targets=np.zeros(1),
                       schema=schema)


def _toy_files(tmp_path, shuffle=False, drop_id=None):
    schema = ConceptSchema(groups=(("a", 1), ("b", 1)), encoding="scalar")
    inputs = np.arange(6.0).reshape(3, 2)
    concepts = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
    targets = np.array([1.0, 2.0, 3.0])
    ids = list(range(3))
    order = [2, 0, 1] if shuffle else [0, 1, 2]
    if drop_id is not None:
        order = [i for i in order if i != drop_id]
    save_inputs(tmp_path / "inputs.npz", inputs)
    save_annotations(tmp_path / "ann.csv", [ids[i] for i in order],
                     concepts[order], targets[order], schema)
    return schema, inputs, concepts, targets


def test_load_tabular_fixture(tmp_path):
    schema, inputs, concepts, targets = _toy_files(tmp_path)
    ds = load_tabular_dataset(tmp_path / "inputs.npz", tmp_path / "ann.csv", schema)
    assert ds.n == 3
    assert np.allclose(ds.inputs, inputs)
    assert np.allclose(ds.concepts_raw, concepts)
    assert np.allclose(ds.targets, targets)


def test_load_tabular_missing_id(tmp_path):
    schema, *_ = _toy_files(tmp_path, drop_id=1)
    with pytest.raises(ValueError, match="id 1"):
        load_tabular_dataset(tmp_path / "inputs.npz", tmp_path / "ann.csv", schema)


def test_load_tabular_shuffled_matches_sorted(tmp_path):
    # oracle: the in-memory join is order-independent by construction
    schema, inputs, concepts, targets = _toy_files(tmp_path, shuffle=True)
    ds = load_tabular_dataset(tmp_path / "inputs.npz", tmp_path / "ann.csv", schema)
    assert np.allclose(ds.concepts_raw, concepts)
    assert np.allclose(ds.targets, targets)


def _reg_dataset(n=10):
    schema = ConceptSchema(groups=(("a", 1),), encoding="scalar")
    rng = np.random.default_rng(0)
    return ConceptDataset(inputs=rng.normal(size=(n, 2)),
                          concepts_raw=rng.normal(size=(n, 1)),
                          targets=rng.normal(size=n), schema=schema)


def test_split_sizes_and_determinism():
    ds = _reg_dataset(10)
    split = split_dataset(ds, (0.8, 0.1, 0.1), seed=7)
    assert (len(split.train_indices), len(split.val_indices),
            len(split.test_indices)) == (8, 1, 1)
    split2 = split_dataset(ds, (0.8, 0.1, 0.1), seed=7)
    assert split.train_indices.tolist() == split2.train_indices.tolist()
    assert split.test_indices.tolist() == split2.test_indices.tolist()


def test_split_stratified_classification():
    schema = ConceptSchema(groups=(("a", 1),), encoding="scalar")
    rng = np.random.default_rng(1)
    n = 40
    ds = ConceptDataset(inputs=rng.normal(size=(n, 2)),
                        concepts_raw=rng.normal(size=(n, 1)),
                        targets=np.tile([0, 1], n // 2), schema=schema,
                        task_kind="classification")
    split = split_dataset(ds, (0.5, 0.25, 0.25), seed=0)
    counts = np.bincount(ds.targets[split.train_indices].astype(int))
    assert abs(counts[0] - counts[1]) <= 1


def test_split_empty_part_rejected():
    ds = _reg_dataset(3)
    with pytest.raises(ValueError, match="empty"):
        split_dataset(ds, (0.9, 0.05, 0.05), seed=0)


def test_encode_concepts_scalar_identity():
    schema = ConceptSchema(groups=(("a", 1), ("b", 1)), encoding="scalar")
    raw = np.array([[0.5, -1.0]])
    assert np.allclose(encode_concepts(raw, schema), raw)
