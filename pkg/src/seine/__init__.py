"""Spam-user detection on heterogeneous interaction graphs."""

from .errors import ConfigError, DataError, SeineError, TrainingError
from .graph import (HeteroGraph, NodeTypeSpec, RelationSpec, build_graph,
                    in_neighbors, reverse_relation, summarize)
from .graphio import load_graph, save_graph
from .metrics import (MetricsReport, auroc_full, auroc_truncated,
                      compute_report, recall_at_fpr, roc_curve)
from .model import (ModelHyper, ModelParams, backward, forward, init_params,
                    load_checkpoint, save_checkpoint)
from .sampler import SampleBlock, SampleBlockSet, full_blocks, sample_blocks
from .synthgen import BehaviorStats, SynthConfig, generate, measure_stats
from .trainer import TrainConfig, TrainHistory, adam_step, evaluate, train

__version__ = "0.1.0"
