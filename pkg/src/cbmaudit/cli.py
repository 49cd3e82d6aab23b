"""Command-line surface: thin wrappers around the library pipelines.

Exit codes: 0 success, 2 config/validation error, 1 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import yaml

from .attribution import aggregate_group_saliency, concept_to_input_saliency
from .config import ConfigError, ExperimentConfig
from .data import split_dataset
from .diagnostics import oracle_alignment_report
from .models import (TrainConfig, evaluate, load_model, predict_concepts,
                     save_model, train_independent, train_joint, train_sequential)
from .pipeline import load_dataset_dir, run_pipeline, write_dataset_dir
from .probes import intervention_curve, single_concept_sweep
from .regularizers import ExtendedBottleneckConfig, train_extended_joint
from .render import (plot_intervention_curves, render_saliency_grid,
                     render_summary, render_sweep_table)
from .synth import SyntheticSpec, default_spec, generate_factorized_task

OUTPUT_ROOT_ENV = "CBMAUDIT_OUTPUT_ROOT"


class RuntimeFailure(click.ClickException):
    exit_code = 1


def _wrap(fn):
    try:
        return fn()
    except (ConfigError, ValueError) as exc:
        raise click.UsageError(str(exc))
    except RuntimeError as exc:
        raise RuntimeFailure(str(exc))


def _load_spec(path) -> SyntheticSpec:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if "factor_partition" in raw:
        return SyntheticSpec.from_dict(raw)
    return default_spec(**raw)


def _load_data(data_dir):
    return load_dataset_dir(data_dir)


def _split_for(dataset, fractions, seed):
    return split_dataset(dataset, fractions, seed)


def _train_cfg(config_path, seed, dataset) -> TrainConfig:
    overrides = {}
    if config_path:
        with open(config_path) as fh:
            overrides = yaml.safe_load(fh) or {}
    cfg = TrainConfig.from_dict({**TrainConfig().to_dict(), **overrides})
    if dataset.schema.encoding == "one_hot":
        cfg.concept_loss = "per_group_cross_entropy"
    if dataset.task_kind == "classification":
        cfg.target_loss = "cross_entropy"
    if seed is not None:
        cfg.seed = seed
    return cfg


@click.group()
def cli():
    """Concept-bottleneck training and audit toolkit."""


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Synthetic task spec (YAML).")
@click.option("--out-dir", required=True, type=click.Path())
def synth(spec_path, out_dir):
    """Generate a synthetic dataset directory."""
    def go():
        spec = _load_spec(spec_path)
        dataset = generate_factorized_task(spec)
        write_dataset_dir(dataset, out_dir, spec_dict=spec.to_dict())
        click.echo(f"wrote {dataset.n} samples to {out_dir}")
    _wrap(go)


_data_opt = click.option("--data", "data_dir", required=True,
                         type=click.Path(exists=True),
                         help="Dataset directory from `synth` or hand-built.")
_seed_opt = click.option("--seed", type=int, default=0, show_default=True)
_cfg_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                        default=None, help="Training config overrides (YAML).")
_frac_opt = click.option("--fractions", nargs=3, type=float,
                         default=(0.7, 0.15, 0.15), show_default=True)
_split_seed_opt = click.option("--split-seed", type=int, default=0, show_default=True)


@cli.command()
@_data_opt
@click.option("--mode", type=click.Choice(["independent", "sequential", "joint"]),
              required=True)
@click.option("--lam", "--lambda", "lam", type=float, default=0.1, show_default=True)
@_seed_opt
@_cfg_opt
@_frac_opt
@_split_seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
def train(data_dir, mode, lam, seed, config_path, fractions, split_seed, out_path):
    """Train a CBM in one of the three modes and write a checkpoint."""
    def go():
        dataset = _load_data(data_dir)
        split = _split_for(dataset, fractions, split_seed)
        cfg = _train_cfg(config_path, seed, dataset)
        trainer = {"independent": train_independent,
                   "sequential": train_sequential}.get(mode)
        model = (trainer(dataset, split, cfg) if trainer
                 else train_joint(dataset, split, lam, cfg))
        save_model(model, out_path)
        click.echo(json.dumps(evaluate(model, dataset, split.test_indices), indent=2))
    _wrap(go)


@cli.command("train-extended")
@_data_opt
@click.option("--h", "h", type=int, required=True, help="Total bottleneck width.")
@click.option("--regularizer", type=click.Choice(
    ["none", "mine_mi", "pairwise_mi_new", "angular", "orthogonality"]),
    default="none", show_default=True)
@click.option("--reg-weight", type=float, default=0.1, show_default=True)
@click.option("--alpha", type=float, default=0.0, show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=0.1, show_default=True)
@_seed_opt
@_cfg_opt
@_frac_opt
@_split_seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
def train_extended(data_dir, h, regularizer, reg_weight, alpha, lam, seed,
                   config_path, fractions, split_seed, out_path):
    """Train an extended bottleneck (k supervised + h-k learned concepts)."""
    def go():
        dataset = _load_data(data_dir)
        split = _split_for(dataset, fractions, split_seed)
        cfg = _train_cfg(config_path, seed, dataset)
        ext = ExtendedBottleneckConfig(k=dataset.schema.k_expanded, h=h,
                                       regularizer=regularizer,
                                       reg_weight=reg_weight, alpha=alpha)
        model = train_extended_joint(dataset, split, ext, lam, cfg)
        save_model(model, out_path)
        click.echo(json.dumps(evaluate(model, dataset, split.test_indices), indent=2))
    _wrap(go)


@cli.command()
@_data_opt
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=0.1, show_default=True)
@_cfg_opt
@_frac_opt
@_split_seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
def sweep(data_dir, seeds, lam, config_path, fractions, split_seed, out_path):
    """Single-concept bottleneck sweep across modes; writes table JSON + text."""
    def go():
        dataset = _load_data(data_dir)
        split = _split_for(dataset, fractions, split_seed)
        cfg = _train_cfg(config_path, None, dataset)
        table = single_concept_sweep(dataset, split, cfg,
                                     seeds=[int(s) for s in seeds.split(",")],
                                     lam=lam)
        Path(out_path).write_text(json.dumps(table.to_dict(), indent=2))
        click.echo(render_sweep_table(table))
    _wrap(go)


@cli.command()
@_data_opt
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--ordering", type=click.Choice(["random", "fixed"]),
              default="random", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@_frac_opt
@_split_seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
def intervene(data_dir, checkpoint, ordering, seeds, fractions, split_seed, out_path):
    """Intervention curve for a trained model; writes JSON plus a plot."""
    def go():
        dataset = _load_data(data_dir)
        split = _split_for(dataset, fractions, split_seed)
        model = load_model(checkpoint)
        curve = intervention_curve(model, dataset, split, ordering=ordering,
                                   seeds=[int(s) for s in seeds.split(",")])
        Path(out_path).write_text(json.dumps(curve.to_dict(), indent=2))
        plot_intervention_curves({model.mode: curve},
                                 Path(out_path).with_suffix(".png"))
        click.echo(json.dumps(curve.to_dict()["points"]))
    _wrap(go)


@cli.command()
@_data_opt
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--sample", type=int, default=0, show_default=True,
              help="Row index of the input to attribute.")
@click.option("--group", type=int, default=0, show_default=True)
@click.option("--method", type=click.Choice(
    ["gradient", "integrated_gradients", "smoothgrad"]),
    default="integrated_gradients", show_default=True)
@click.option("--steps", type=int, default=64, show_default=True)
@click.option("--out-prefix", required=True, type=click.Path())
def attribute(data_dir, checkpoint, sample, group, method, steps, out_prefix):
    """Concept-to-input saliency maps for one sample; raw arrays plus a grid."""
    def go():
        dataset = _load_data(data_dir)
        model = load_model(checkpoint)
        x = dataset.inputs[sample]
        params = {"steps": steps} if method == "integrated_gradients" else {}
        maps = concept_to_input_saliency(model, x, group, method=method,
                                         params=params)
        np.savez(f"{out_prefix}.npz", **{f"cat{i}": m.values
                                         for i, m in enumerate(maps)})
        sl = model.schema.group_slices()[group]
        logits = predict_concepts(model, x.reshape(1, -1))[0, sl]
        agg = aggregate_group_saliency(
            maps, logits, mode="softmax_weighted" if len(maps) > 1 else "mean")
        render_saliency_grid(x, maps, agg, f"{out_prefix}.png")
        click.echo(f"wrote {out_prefix}.npz and {out_prefix}.png")
    _wrap(go)


@cli.command()
@_data_opt
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=0.1, show_default=True)
@click.option("--n-samples", type=int, default=40, show_default=True)
@_cfg_opt
@_frac_opt
@_split_seed_opt
@click.option("--out", "out_path", required=True, type=click.Path())
def align(data_dir, seeds, lam, n_samples, config_path, fractions, split_seed,
          out_path):
    """Train oracle/sequential/joint per seed and report saliency alignment."""
    def go():
        dataset = _load_data(data_dir)
        split = _split_for(dataset, fractions, split_seed)
        triples = []
        for seed in (int(s) for s in seeds.split(",")):
            cfg = _train_cfg(config_path, seed, dataset)
            ind = train_independent(dataset, split, cfg)
            triples.append({"oracle": ind,
                            "sequential": train_sequential(dataset, split, cfg),
                            "joint": train_joint(dataset, split, lam, cfg)})
        stats = oracle_alignment_report(triples, dataset, split,
                                        n_samples=n_samples)
        Path(out_path).write_text(json.dumps(stats.to_dict(), indent=2))
        for name, p in stats.pairs.items():
            click.echo(f"{name}: {p['mean']:.3f} ± {p['std']:.3f}")
    _wrap(go)


@cli.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True),
              help="report.json produced by `run`.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def report(report_path, out_path):
    """Render a machine-readable report into the human-readable summary."""
    def go():
        text = render_summary(json.loads(Path(report_path).read_text()))
        if out_path:
            Path(out_path).write_text(text)
        click.echo(text)
    _wrap(go)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--output-root", default=None,
              help=f"Overrides config and ${OUTPUT_ROOT_ENV}.")
def run(config_path, output_root):
    """Full pipeline: data, training, probes, attribution, report."""
    def go():
        config = ExperimentConfig.load(config_path)
        root = output_root or os.environ.get(OUTPUT_ROOT_ENV) or config.output_root
        run_dir = run_pipeline(config, output_root=root)
        click.echo(f"run complete: {run_dir}")
    _wrap(go)


def main():
    cli(prog_name="cbmaudit")


if __name__ == "__main__":
    main()
