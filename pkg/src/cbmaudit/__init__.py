"""Concept bottleneck model training and audit toolkit."""

from .data import ConceptDataset, DataSplit, load_tabular_dataset, split_dataset
from .schema import ConceptSchema, one_hot_collapse, one_hot_expand
from .synth import SyntheticSpec, default_spec, generate_factorized_task, generate_leaky_task

__version__ = "0.1.0"
