import numpy as np
import pytest
import torch

from cbmaudit.data import ConceptDataset, split_dataset
from cbmaudit.models import (MLP, TrainConfig, evaluate, load_model,
                             predict_concepts, predict_end_to_end,
                             predict_target_from_concepts, save_model,
                             train_independent, train_joint, train_sequential)
from cbmaudit.probes import oracle_predict
from cbmaudit.schema import ConceptSchema


def _linear_task(n=1200, seed=0):
    """Concepts are linear in x, target linear in concepts, no noise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 6))
    c = x[:, :2].copy()
    y = c @ np.array([0.7, -0.5])
    schema = ConceptSchema(groups=(("a", 1), ("b", 1)), encoding="scalar")
    ds = ConceptDataset(inputs=x, concepts_raw=c, targets=y, schema=schema)
    return ds, split_dataset(ds, (0.7, 0.15, 0.15), 0)


QUICK = dict(epochs=80, patience=80, batch_size=256)


def test_independent_on_linear_task_matches_closed_form():
    ds, split = _linear_task()
    model = train_independent(ds, split, TrainConfig(seed=0, **QUICK))
    m = evaluate(model, ds, split.test_indices)
    assert max(m["concept_rmse"].values()) < 0.05
    # closed-form y~c least squares on the train split
    tr, te = split.train_indices, split.test_indices
    A = np.hstack([ds.concepts_raw[tr], np.ones((len(tr), 1))])
    coef, *_ = np.linalg.lstsq(A, ds.targets[tr], rcond=None)
    Ate = np.hstack([ds.concepts_raw[te], np.ones((len(te), 1))])
    rmse_ls = np.sqrt(np.mean((Ate @ coef - ds.targets[te]) ** 2))
    pred = oracle_predict(model, ds.concepts_raw[te])
    rmse_f = np.sqrt(np.mean((pred - ds.targets[te]) ** 2))
    assert rmse_f <= max(rmse_ls * 1.1, rmse_ls + 0.03)


def test_sequential_low_error_on_linear_task():
    ds, split = _linear_task()
    model = train_sequential(ds, split, TrainConfig(seed=0, **QUICK))
    assert evaluate(model, ds, split.test_indices)["target_rmse"] < 0.05


def test_sequential_g_equals_independent_g():
    ds, split = _linear_task(n=400)
    cfg = TrainConfig(seed=1, epochs=15, patience=15)
    ind = train_independent(ds, split, cfg)
    seq = train_sequential(ds, split, cfg)
    for pa, pb in zip(ind.g.parameters(), seq.g.parameters()):
        assert torch.equal(pa, pb)


def test_training_determinism_same_seed():
    ds, split = _linear_task(n=400)
    cfg = TrainConfig(seed=2, epochs=10, patience=10)
    a = train_joint(ds, split, 0.5, cfg)
    b = train_joint(ds, split, 0.5, cfg)
    for pa, pb in zip(a.g.parameters(), b.g.parameters()):
        assert torch.equal(pa, pb)
    for pa, pb in zip(a.f.parameters(), b.f.parameters()):
        assert torch.equal(pa, pb)


def test_joint_lambda_zero_ignores_concepts():
    ds, split = _linear_task(n=800)
    cfg = TrainConfig(seed=0, epochs=40, patience=40)
    model = train_joint(ds, split, 0.0, cfg)
    m = evaluate(model, ds, split.test_indices)
    # target is learned, concepts are not supervised at all
    assert m["target_rmse"] < 0.1
    # an untrained-g baseline: same architecture, no training
    final_c = model.training_log["concept_val_loss"][-1]
    assert final_c > 0.1  # far above the supervised-concept regime


def test_joint_large_lambda_approaches_independent_concepts():
    ds, split = _linear_task(n=800)
    cfg = TrainConfig(seed=0, epochs=60, patience=60)
    ind = train_independent(ds, split, cfg)
    jnt = train_joint(ds, split, 1000.0, cfg)
    rmse_ind = max(evaluate(ind, ds, split.test_indices)["concept_rmse"].values())
    rmse_jnt = max(evaluate(jnt, ds, split.test_indices)["concept_rmse"].values())
    assert rmse_jnt <= rmse_ind * 1.2 + 0.02


def test_composition_identity(small_independent_model, small_factorized):
    _, ds, split = small_factorized
    m = small_independent_model
    x = ds.inputs[split.test_indices[:16]]
    lhs = predict_end_to_end(m, x)
    rhs = predict_target_from_concepts(m, predict_concepts(m, x))
    assert np.array_equal(lhs, rhs)


def test_empty_batch():
    ds, split = _linear_task(n=400)
    m = train_independent(ds, split, TrainConfig(seed=0, epochs=2, patience=2))
    assert predict_end_to_end(m, np.zeros((0, ds.d))).shape == (0,)
    assert predict_concepts(m, np.zeros((0, ds.d))).shape == (0, 2)


def test_dimension_mismatch_rejected(small_independent_model):
    with pytest.raises(ValueError, match="expected shape"):
        predict_concepts(small_independent_model, np.zeros((3, 99)))
    with pytest.raises(ValueError, match="expected shape"):
        predict_target_from_concepts(small_independent_model, np.zeros((3, 99)))


def test_evaluate_fixtures():
    # hand-computed: residuals (1, 2, 2) -> RMSE = sqrt(3)
    rng = np.random.default_rng(0)
    schema = ConceptSchema(groups=(("a", 1),), encoding="scalar")
    ds = ConceptDataset(inputs=rng.normal(size=(3, 2)),
                        concepts_raw=np.zeros((3, 1)),
                        targets=np.array([1.0, 2.0, 2.0]), schema=schema)

    class Zero(torch.nn.Module):
        arch = {"in_dim": 2, "hidden": [], "out_dim": 1}

        def forward(self, x):
            return torch.zeros(x.shape[0], 1)

    class ZeroF(torch.nn.Module):
        arch = {"in_dim": 1, "hidden": [], "out_dim": 1}

        def forward(self, c):
            return torch.zeros(c.shape[0], 1)

    from cbmaudit.models import BottleneckModel
    m = BottleneckModel(g=Zero(), f=ZeroF(), schema=schema, mode="independent")
    res = evaluate(m, ds, np.array([0, 1, 2]))
    assert res["target_rmse"] == pytest.approx(np.sqrt(3.0))
    with pytest.raises(ValueError, match="empty"):
        evaluate(m, ds, np.array([], dtype=int))


def test_evaluate_constant_predictor_unit_variance():
    rng = np.random.default_rng(1)
    y = rng.normal(size=500)
    y = (y - y.mean()) / y.std()
    rmse = np.sqrt(np.mean((y - y.mean()) ** 2))
    assert rmse == pytest.approx(1.0, abs=0.05)


def test_loss_gradients_match_finite_differences():
    # central finite differences on a small float64 network
    torch.manual_seed(0)
    net = MLP(3, (8,), 2).double()
    x = torch.randn(5, 3, dtype=torch.float64)
    c = torch.randn(5, 2, dtype=torch.float64)

    def loss_fn():
        return ((net(x) - c) ** 2).mean()

    loss = loss_fn()
    loss.backward()
    for p in net.parameters():
        flat = p.detach().reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(min(5, flat.numel())):
            eps = 1e-6
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            assert gflat[i].item() == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_checkpoint_round_trip(tmp_path, small_independent_model, small_factorized):
    _, ds, split = small_factorized
    m = small_independent_model
    save_model(m, tmp_path / "m.pt")
    loaded = load_model(tmp_path / "m.pt")
    x = ds.inputs[split.test_indices[:8]]
    assert np.array_equal(predict_end_to_end(m, x), predict_end_to_end(loaded, x))
    assert loaded.mode == "independent"


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(concept_loss="nope")
