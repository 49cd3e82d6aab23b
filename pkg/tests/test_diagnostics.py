import numpy as np
import pytest

from cbmaudit.attribution import SaliencyMap
from cbmaudit.diagnostics import (AlignmentStats, DiagnosticsReport,
                                  assemble_report, oracle_alignment_report,
                                  saliency_r2)
from cbmaudit.models import TrainConfig, train_joint, train_sequential
from cbmaudit.probes import InterventionCurve


def _map(vals):
    return SaliencyMap(values=np.asarray(vals, dtype=float), method="gradient",
                       output_index=0)


def test_r2_identical_is_one():
    m = _map([0.3, -1.2, 4.0])
    assert saliency_r2(m, m) == pytest.approx(1.0)


def test_r2_mean_predictor_is_zero():
    a = _map([1.0, 2.0, 3.0])
    b = _map([2.0, 2.0, 2.0])
    assert saliency_r2(a, b) == pytest.approx(0.0)


def test_r2_hand_computed_fixture():
    # ss_res = 1, ss_tot = 2 -> 0.5
    a = _map([1.0, 2.0, 3.0])
    b = _map([1.0, 2.0, 4.0])
    assert saliency_r2(a, b) == pytest.approx(0.5)


def test_r2_asymmetric():
    a = _map([1.0, 2.0, 3.0])
    b = _map([1.0, 2.0, 30.0])
    assert saliency_r2(a, b) != saliency_r2(b, a)


def test_r2_constant_reference_rejected():
    with pytest.raises(ValueError, match="constant"):
        saliency_r2(_map([1.0, 1.0]), _map([1.0, 2.0]))
    with pytest.raises(ValueError, match="shape"):
        saliency_r2(_map([1.0, 2.0]), _map([1.0, 2.0, 3.0]))


def test_self_alignment_perfect(small_factorized, small_independent_model):
    # oracle vs itself in every role: all pair means are exactly 1
    _, ds, split = small_factorized
    m = small_independent_model
    triples = [{"oracle": m, "sequential": m, "joint": m}]
    # sequential/joint roles are attributed at their own predicted concepts,
    # which differ from the ground truth, so restrict to the oracle pair via
    # a triple where the same model receives the same concept input
    stats = oracle_alignment_report(triples, ds, split, method="gradient",
                                    n_samples=5)
    assert set(stats.pairs) == {"oracle_vs_sequential", "oracle_vs_joint",
                                "sequential_vs_joint"}
    seq_vs_joint = stats.pairs["sequential_vs_joint"]
    assert seq_vs_joint["mean"] == pytest.approx(1.0, abs=1e-10)
    assert seq_vs_joint["std"] == pytest.approx(0.0, abs=1e-10)
    assert seq_vs_joint["rank_corr_mean"] == pytest.approx(1.0, abs=1e-10)


def test_alignment_requires_independent_oracle(small_factorized, quick_config):
    _, ds, split = small_factorized
    jnt = train_joint(ds, split, 0.5, TrainConfig(seed=0, epochs=3, patience=3))
    with pytest.raises(ValueError, match="independent"):
        oracle_alignment_report([{"oracle": jnt, "sequential": jnt,
                                  "joint": jnt}], ds, split, n_samples=2)


def test_alignment_runs_with_ig(small_factorized, small_independent_model):
    _, ds, split = small_factorized
    cfg = TrainConfig(seed=0, epochs=5, patience=5)
    seq = train_sequential(ds, split, cfg)
    jnt = train_joint(ds, split, 0.5, cfg)
    stats = oracle_alignment_report(
        [{"oracle": small_independent_model, "sequential": seq, "joint": jnt}],
        ds, split, method="integrated_gradients", params={"steps": 16},
        n_samples=4)
    assert stats.n_test_samples == 4
    for name, vals in stats.pairs.items():
        assert np.isfinite(vals["mean"])
        assert len(vals["seed_means"]) == 1


def test_report_json_round_trip():
    curve = InterventionCurve(points=[(0, 0.8), (1, 0.3)], ordering="fixed",
                              seeds=[0], orders=[[0]])
    rep = assemble_report({"lam": 0.5}, "synth:factorized:seed=3",
                          curves={"joint": curve},
                          metrics={"target_rmse": 0.12})
    back = DiagnosticsReport.from_json(rep.to_json())
    assert back.lineage == rep.lineage
    assert back.curves["joint"].points == curve.points
    assert back.metrics == rep.metrics
    # canonical: serializing twice is byte-identical
    assert rep.to_json() == DiagnosticsReport.from_json(rep.to_json()).to_json()


def test_report_lineage_mismatch_rejected():
    with pytest.raises(ValueError, match="lineage mismatch"):
        assemble_report({}, "synth:a", component_lineages=["synth:a", "synth:b"])


def test_alignment_stats_to_dict_drops_per_sample():
    stats = AlignmentStats(pairs={}, per_sample={"x": [1.0]}, method="gradient",
                           params={}, n_test_samples=1)
    assert "per_sample" not in stats.to_dict()
