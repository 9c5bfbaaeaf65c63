"""HTTP service wrapping the library: generate, build, inspect, train,
evaluate, score, embed.

All heavy inputs and outputs (graphs, checkpoints) live on the server's
filesystem; requests carry paths plus config overrides, responses carry
JSON reports. The CLI talks to this app in-process by default and over
HTTP when pointed at a remote server.
"""

from __future__ import annotations

import dataclasses
import json
import logging

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import graphio, ingest, model as M, synthgen, trainer
from .config import build_config
from .errors import DataError, SeineError, TrainingError
from .graph import summarize

log = logging.getLogger(__name__)

app = FastAPI(title="seine", version="0.1.0")


@app.exception_handler(SeineError)
async def seine_error_handler(request: Request, exc: SeineError):
    status = 500 if isinstance(exc, TrainingError) else 400
    return JSONResponse(status_code=status,
                        content={"error": str(exc),
                                 "kind": type(exc).__name__})


@app.exception_handler(FileNotFoundError)
async def missing_file_handler(request: Request, exc: FileNotFoundError):
    return JSONResponse(status_code=400,
                        content={"error": str(exc), "kind": "DataError"})


class SynthRequest(BaseModel):
    out_path: str
    config_path: str | None = None
    overrides: dict = Field(default_factory=dict)
    seed: int | None = None


class BuildGraphRequest(BaseModel):
    mode: str = "records"  # "records" | "edge-lists"
    out_path: str
    # records mode
    records_path: str | None = None
    user_features_path: str | None = None
    domain_features_path: str | None = None
    labels_path: str | None = None
    rules_overrides: dict = Field(default_factory=dict)
    # edge-lists mode
    node_count: int | None = None
    relation_files: dict = Field(default_factory=dict)
    feature_file: str | None = None
    train_fraction: float = 0.4
    val_fraction: float = 0.1
    seed: int = 0


class InspectRequest(BaseModel):
    graph_path: str


class TrainRequest(BaseModel):
    graph_path: str
    checkpoint_path: str
    config_path: str | None = None
    overrides: dict = Field(default_factory=dict)
    seed: int | None = None
    history_path: str | None = None


class EvalRequest(BaseModel):
    graph_path: str
    checkpoint_path: str
    split: str = "test"
    include_roc: bool = False


class ScoreRequest(BaseModel):
    graph_path: str
    checkpoint_path: str
    user_ids: list[int] | None = None  # default: all labeled users


class EmbedRequest(BaseModel):
    graph_path: str
    checkpoint_path: str
    user_ids: list[int] | None = None


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/synth")
def synth(req: SynthRequest):
    overrides = dict(req.overrides)
    if req.seed is not None:
        overrides["seed"] = req.seed
    config = build_config(synthgen.SynthConfig, req.config_path, overrides)
    graph, labels = synthgen.generate(config)
    graphio.save_graph(req.out_path, graph)
    stats = synthgen.measure_stats(graph, labels)
    return {"graph_path": req.out_path,
            "config": dataclasses.asdict(config),
            "measured_stats": stats.to_dict(),
            "summary": summarize(graph)}


@app.post("/build-graph")
def build_graph_endpoint(req: BuildGraphRequest):
    if req.mode == "records":
        for name, val in (("records_path", req.records_path),
                          ("user_features_path", req.user_features_path),
                          ("domain_features_path", req.domain_features_path)):
            if not val:
                raise DataError(f"records mode requires {name}")
        records = ingest.parse_interaction_records(req.records_path)
        rules = build_config(ingest.ConstructionRules, None, req.rules_overrides)
        labels = (ingest.parse_label_file(req.labels_path)
                  if req.labels_path else {})
        graph, idmap = ingest.apply_construction_rules(
            records,
            ingest.parse_feature_table(req.user_features_path),
            ingest.parse_feature_table(req.domain_features_path),
            labels, rules)
        graphio.save_graph(req.out_path, graph)
        graphio.save_idmap(req.out_path, idmap)
    elif req.mode == "edge-lists":
        if req.node_count is None or not req.relation_files or not req.labels_path:
            raise DataError(
                "edge-lists mode requires node_count, relation_files and labels_path")
        graph = ingest.load_relation_edge_lists(
            req.node_count, req.relation_files, req.labels_path,
            req.feature_file, req.train_fraction, req.val_fraction, req.seed)
        graphio.save_graph(req.out_path, graph)
    else:
        raise DataError(f"unknown build mode {req.mode!r}")
    return {"graph_path": req.out_path, "summary": summarize(graph)}


@app.post("/inspect")
def inspect(req: InspectRequest):
    graph = graphio.load_graph(req.graph_path)
    return summarize(graph)


@app.post("/train")
def train_endpoint(req: TrainRequest):
    overrides = dict(req.overrides)
    if req.seed is not None:
        overrides["seed"] = req.seed
    config = build_config(trainer.TrainConfig, req.config_path, overrides)
    graph = graphio.load_graph(req.graph_path)
    params, history = trainer.train(graph, config)
    M.save_checkpoint(req.checkpoint_path, params)
    if req.history_path:
        with open(req.history_path, "w", encoding="utf-8") as f:
            for rec in history.steps:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            for rec in history.evals:
                f.write(json.dumps({"eval": rec}, sort_keys=True) + "\n")
    return {"checkpoint_path": req.checkpoint_path,
            "best_step": history.best_step,
            "best_val_recall_at_fpr1": history.best_recall,
            "steps_run": len(history.steps),
            "stopped_early": history.stopped_early,
            "final_loss": history.steps[-1]["loss"] if history.steps else None}


@app.post("/eval")
def eval_endpoint(req: EvalRequest):
    graph = graphio.load_graph(req.graph_path)
    params = M.load_checkpoint(req.checkpoint_path)
    report = trainer.evaluate(graph, params, req.split,
                              include_roc=req.include_roc)
    return report.to_dict()


def _resolve_user_ids(graph, user_ids):
    if user_ids is not None:
        return np.asarray(user_ids, dtype=np.int64)
    if graph.labels is None:
        raise DataError("graph has no labels; pass explicit user_ids")
    return graph.labels.node_ids


def _external_ids(graph_path, ids):
    idmap = graphio.load_idmap(graph_path)
    if idmap and "user" in idmap:
        rev = {v: k for k, v in idmap["user"].items()}
        return [rev.get(int(i), str(int(i))) for i in ids]
    return [str(int(i)) for i in ids]


@app.post("/score")
def score_endpoint(req: ScoreRequest):
    graph = graphio.load_graph(req.graph_path)
    params = M.load_checkpoint(req.checkpoint_path)
    ids = _resolve_user_ids(graph, req.user_ids)
    probs = trainer.score(graph, params, ids)
    ext = _external_ids(req.graph_path, ids)
    return {"users": ext, "scores": [float(p) for p in probs]}


@app.post("/embed")
def embed_endpoint(req: EmbedRequest):
    graph = graphio.load_graph(req.graph_path)
    params = M.load_checkpoint(req.checkpoint_path)
    ids = _resolve_user_ids(graph, req.user_ids)
    vecs = trainer.embed(graph, params, ids)
    ext = _external_ids(req.graph_path, ids)
    return {"users": ext, "embeddings": [[float(x) for x in row] for row in vecs]}
