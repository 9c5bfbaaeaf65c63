"""Mini-batch training loop: Adam, L2, validation-based early stopping.

Training samples fresh neighbor blocks every step; evaluation always uses
full neighborhoods so reported metrics carry no sampling noise. Early
stopping monitors validation recall at 1% FPR and returns the best
parameters seen, not the last. Everything is deterministic given
(graph, config).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .errors import DataError, TrainingError
from .graph import SPLIT_NAMES, HeteroGraph
from .metrics import compute_report
from .sampler import sample_blocks


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 256
    num_layers: int = 2
    edge_mlp_hidden: int = 16
    batch_size: int = 512
    # printed setting in the source material is not a usable rate; 9.5e-5 reads
    # the exponent as a typo and is overridable here
    learning_rate: float = 9.5e-5
    l2_weight: float = 1e-4
    fanout: int = 50
    max_steps: int = 2000
    eval_every: int = 50
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    norm_position: str = "post_activation"
    use_edge_features: bool = True
    val_fraction: float = 0.1
    eval_fpr: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 1 or self.fanout < 1:
            raise DataError("batch_size, max_steps and fanout must be >= 1")
        if self.learning_rate < 0 or self.eval_every < 1 or self.patience < 0:
            raise DataError("bad learning_rate/eval_every/patience")


class AdamState:
    def __init__(self, params: M.ModelParams):
        self.step = 0
        self.m = {n: np.zeros_like(a) for n, a in params.named_tensors()}
        self.v = {n: np.zeros_like(a) for n, a in params.named_tensors()}


def adam_step(params: M.ModelParams, grads: M.ModelParams, state: AdamState,
              config: TrainConfig):
    """Standard Adam with bias correction, applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr, eps = config.learning_rate, config.adam_eps
    for (name, p), (_, g) in zip(params.named_tensors(), grads.named_tensors()):
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)   # {"step", "loss"}
    evals: list = field(default_factory=list)   # {"step", "recall_at_fpr1", ...}
    best_step: int = 0
    best_recall: float = -1.0
    stopped_early: bool = False

    def to_dict(self):
        return {"steps": self.steps, "evals": self.evals,
                "best_step": self.best_step, "best_recall": self.best_recall,
                "stopped_early": self.stopped_early}


def _split_ids(graph: HeteroGraph, split_name):
    if graph.labels is None:
        raise DataError("graph has no labels")
    return graph.labels.ids_for_split(split_name)


def _carve_validation(train_ids, train_y, val_fraction, rng):
    """Stratified validation carve-out when the graph has no explicit val split."""
    val_mask = np.zeros(len(train_ids), dtype=bool)
    for cls in (0, 1):
        idx = np.nonzero(train_y == cls)[0]
        n_val = int(round(len(idx) * val_fraction))
        if len(idx) > 1:
            n_val = min(max(n_val, 1), len(idx) - 1)
        chosen = rng.permutation(idx)[:n_val]
        val_mask[chosen] = True
    return (train_ids[~val_mask], train_y[~val_mask],
            train_ids[val_mask], train_y[val_mask])


def _scores_full(params, graph, ids, chunk=4096):
    return M.score_nodes(params, graph, ids, chunk=chunk)


def evaluate(graph: HeteroGraph, params: M.ModelParams, split,
             config: TrainConfig = None, include_roc=False):
    """Score every labeled node in a split with full neighborhoods."""
    config = config or TrainConfig()
    if isinstance(split, str):
        ids, y = _split_ids(graph, split)
    else:
        ids, y = split
    if len(ids) == 0:
        raise DataError("split has no labeled nodes")
    if len(np.unique(y)) < 2:
        raise DataError("single-class split: metrics undefined")
    scores = _scores_full(params, graph, ids)
    return compute_report(scores, y, fpr_max=config.eval_fpr, include_roc=include_roc)


def score(graph: HeteroGraph, params: M.ModelParams, user_ids):
    """Deterministic full-neighborhood spam probabilities per user."""
    return _scores_full(params, graph, np.asarray(user_ids, dtype=np.int64))


def embed(graph: HeteroGraph, params: M.ModelParams, user_ids):
    """Final-layer embeddings (before the output head), one row per user."""
    return M.embed_nodes(params, graph, np.asarray(user_ids, dtype=np.int64))


def train(graph: HeteroGraph, config: TrainConfig):
    """Returns (best ModelParams, TrainHistory)."""
    train_ids, train_y = _split_ids(graph, "train")
    if len(train_ids) == 0:
        raise DataError("no train-labeled nodes")
    val_ids, val_y = _split_ids(graph, "val")
    ss = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seed, sample_seed, carve_seed = ss.spawn(4)
    if len(val_ids) == 0:
        train_ids, train_y, val_ids, val_y = _carve_validation(
            train_ids, train_y, config.val_fraction,
            np.random.default_rng(carve_seed))
    if len(train_ids) == 0:
        raise DataError("no train-labeled nodes after validation carve-out")
    can_eval = len(np.unique(val_y)) == 2

    hyper = M.ModelHyper.from_graph(
        graph, embed_dim=config.embed_dim, num_layers=config.num_layers,
        edge_mlp_hidden=config.edge_mlp_hidden,
        norm_position=config.norm_position,
        use_edge_features=config.use_edge_features)
    params = M.init_params(hyper, np.random.default_rng(init_seed))
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    sample_base = int(np.random.default_rng(sample_seed).integers(2**62))

    label_of = dict(zip(train_ids.tolist(), train_y.tolist()))
    history = TrainHistory()
    best_params = params.copy()
    bad_evals = 0
    order = shuffle_rng.permutation(len(train_ids))
    cursor = 0
    fanouts = [config.fanout] * config.num_layers

    for step in range(1, config.max_steps + 1):
        if cursor >= len(order):
            order = shuffle_rng.permutation(len(train_ids))
            cursor = 0
        batch_idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        seeds = train_ids[batch_idx]
        labels = np.array([label_of[int(i)] for i in seeds], dtype=np.float64)

        blocks = sample_blocks(graph, seeds, fanouts,
                               rng_seed=sample_base + step)
        probs, trace = M.forward(params, graph, blocks)
        loss = M.total_loss(params, trace, labels, l2_weight=config.l2_weight)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {step} (loss={loss!r}); "
                f"lr={config.learning_rate}, batch={len(seeds)}")
        grads = M.backward(params, graph, trace, labels,
                           l2_weight=config.l2_weight)
        adam_step(params, grads, state, config)
        history.steps.append({"step": step, "loss": loss})

        if can_eval and step % config.eval_every == 0:
            report = evaluate(graph, params, (val_ids, val_y), config)
            history.evals.append({
                "step": step,
                "recall_at_fpr1": report.recall_at_fpr1,
                "auroc_trunc_fpr1": report.auroc_trunc_fpr1,
                "auroc_full": report.auroc_full,
            })
            if report.recall_at_fpr1 > history.best_recall:
                history.best_recall = report.recall_at_fpr1
                history.best_step = step
                best_params = params.copy()
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= config.patience:
                    history.stopped_early = True
                    break

    if history.best_step == 0:
        # no evaluation ever improved (or no usable val split): keep final params
        best_params = params
        history.best_step = len(history.steps)
    return best_params, history
