"""Experiment orchestration: one config in, one reproducible run directory out."""

from __future__ import annotations

import datetime
import json
import traceback
from pathlib import Path

import numpy as np
import yaml

from .attribution import (BaselineSpec, aggregate_group_saliency,
                          concept_to_input_saliency)
from .config import ExperimentConfig
from .data import (ConceptDataset, DataSplit, load_tabular_dataset,
                   save_annotations, save_inputs, split_dataset)
from .diagnostics import DiagnosticsReport, assemble_report, oracle_alignment_report
from .models import (evaluate, predict_concepts, save_model, train_independent,
                     train_joint, train_sequential)
from .probes import intervention_curve, single_concept_sweep
from .regularizers import train_extended_joint
from .render import (plot_intervention_curves, render_saliency_grid,
                     render_summary)
from .schema import ConceptSchema
from .synth import generate_factorized_task


def write_dataset_dir(dataset: ConceptDataset, out_dir, spec_dict: dict | None = None):
    """Persist a dataset in the file formats the loaders understand."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_inputs(out_dir / "inputs.npz", dataset.inputs)
    save_annotations(out_dir / "annotations.csv", range(dataset.n),
                     dataset.concepts_raw, dataset.targets, dataset.schema)
    dataset.schema.save(out_dir / "schema.yaml")
    meta = {"task_kind": dataset.task_kind, "provenance": dataset.provenance}
    if spec_dict:
        meta["synthetic_spec"] = spec_dict
    with open(out_dir / "meta.yaml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)


def load_dataset_dir(data_dir) -> ConceptDataset:
    data_dir = Path(data_dir)
    schema = ConceptSchema.load(data_dir / "schema.yaml")
    task_kind = "regression"
    meta_path = data_dir / "meta.yaml"
    if meta_path.exists():
        with open(meta_path) as fh:
            task_kind = (yaml.safe_load(fh) or {}).get("task_kind", "regression")
    return load_tabular_dataset(data_dir / "inputs.npz",
                                data_dir / "annotations.csv", schema,
                                task_kind=task_kind)


def resolve_dataset(config: ExperimentConfig) -> ConceptDataset:
    if "synthetic" in config.dataset:
        return generate_factorized_task(config.synthetic_spec())
    files = config.dataset["files"]
    schema = ConceptSchema.load(files["schema"])
    return load_tabular_dataset(files["inputs"], files["annotations"], schema,
                                task_kind=files.get("task_kind", "regression"))


def _baseline_from(config: ExperimentConfig, dataset: ConceptDataset) -> BaselineSpec:
    b = dict(config.attribution.get("baseline", {"kind": "zeros"}))
    if b.get("kind") == "dataset_mean":
        b["reference"] = dataset.inputs.mean(axis=0)
    return BaselineSpec(**b)


def _attr_params(config: ExperimentConfig, dataset: ConceptDataset) -> dict:
    method = config.attribution.get("method", "integrated_gradients")
    params = {k: v for k, v in config.attribution.items()
              if k not in ("method", "baseline")}
    if method == "integrated_gradients":
        params["baseline"] = _baseline_from(config, dataset)
    return method, params


def run_pipeline(config: ExperimentConfig, output_root=None) -> Path:
    """Run training, probes, attribution and reporting for one config.

    The run directory is content-addressed by the config hash; completed
    artifacts are retained on partial failure alongside a failure manifest.
    """
    config.validate()
    root = Path(output_root or config.output_root)
    run_dir = root / f"run_{config.content_hash()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.yaml")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    try:
        report = _run(config, run_dir)
    except Exception as exc:
        with open(run_dir / "failure_manifest.json", "w") as fh:
            json.dump({"error": str(exc), "traceback": traceback.format_exc(),
                       "started": started}, fh, indent=2)
        raise
    (run_dir / "report.json").write_text(report.to_json())
    (run_dir / "summary.md").write_text(render_summary(report.to_dict()))
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump({"started": started, "finished": finished,
                   "artifacts": sorted(p.name for p in run_dir.iterdir())},
                  fh, indent=2)
    return run_dir


def _run(config: ExperimentConfig, run_dir: Path) -> DiagnosticsReport:
    dataset = resolve_dataset(config)
    split = split_dataset(dataset, config.split_fractions, config.split_seed)
    with open(run_dir / "split.json", "w") as fh:
        json.dump(split.to_dict(), fh)
    train_cfg = config.train_config()
    if dataset.schema.encoding == "one_hot":
        train_cfg.concept_loss = "per_group_cross_entropy"
    if dataset.task_kind == "classification":
        train_cfg.target_loss = "cross_entropy"

    metrics: dict = {}
    triples = []
    from dataclasses import replace
    for seed in config.seeds:
        cfg = replace(train_cfg, seed=int(seed))
        models = {
            "independent": train_independent(dataset, split, cfg),
            "sequential": train_sequential(dataset, split, cfg),
            "joint": train_joint(dataset, split, config.lam, cfg),
        }
        if config.regularizer is not None:
            models["extended_joint"] = train_extended_joint(
                dataset, split, config.extended_config(), config.lam, cfg)
        for mode, model in models.items():
            save_model(model, run_dir / f"model_{mode}_seed{seed}.pt")
            metrics[f"{mode}_seed{seed}"] = evaluate(model, dataset,
                                                     split.test_indices)
        triples.append({"oracle": models["independent"],
                        "sequential": models["sequential"],
                        "joint": models["joint"],
                        "all": models})

    sweep = None
    if config.probes.get("sweep", True) and dataset.schema.k_groups >= 2:
        sweep = single_concept_sweep(dataset, split, train_cfg,
                                     seeds=[int(s) for s in config.seeds],
                                     lam=config.lam)

    curves = {}
    if config.probes.get("intervention", True):
        ordering = config.probes.get("ordering", "random")
        first = triples[0]["all"]
        for mode in ("independent", "sequential", "joint"):
            curves[mode] = intervention_curve(first[mode], dataset, split,
                                              ordering=ordering,
                                              seeds=[int(s) for s in config.seeds])
        plot_intervention_curves(curves, run_dir / "intervention_curves.png")

    alignment = None
    if config.alignment.get("enabled", True):
        method, params = _attr_params(config, dataset)
        alignment = oracle_alignment_report(
            triples, dataset, split, method=method, params=params,
            n_samples=int(config.alignment.get("n_samples", 40)))

    # saliency grid for the first test sample, first concept group
    method, params = _attr_params(config, dataset)
    model = triples[0]["oracle"]
    x0 = dataset.inputs[split.test_indices[0]]
    maps = concept_to_input_saliency(model, x0, 0, method=method, params=params)
    np.savez(run_dir / "saliency_group0.npz",
             **{f"cat{i}": m.values for i, m in enumerate(maps)})
    sl = dataset.schema.group_slices()[0]
    logits = predict_concepts(model, x0.reshape(1, -1))[0, sl]
    agg = aggregate_group_saliency(
        maps, logits, mode="softmax_weighted" if len(maps) > 1 else "mean")
    render_saliency_grid(x0, maps, agg, run_dir / "saliency_group0.png")

    return assemble_report(
        config_snapshot=config.to_dict(), lineage=dataset.provenance,
        sweep=sweep, curves=curves, alignment=alignment, metrics=metrics)
