"""Directed heterogeneous multigraph with typed node/edge features and labels.

Storage is per-relation CSR indexed by destination node, because the model
aggregates messages into a node from its in-neighbors. Edge ids are row
indices into the relation's edge-feature matrix, in CSR storage order
(stable sort by destination, then input order). Graphs are immutable after
build and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2

SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


@dataclass(frozen=True)
class NodeTypeSpec:
    name: str
    feature_dim: int
    count: int


@dataclass(frozen=True)
class RelationSpec:
    name: str
    src_type: str
    dst_type: str
    edge_feature_dim: int


@dataclass(frozen=True)
class CSRAdjacency:
    """In-edges of every destination node of one relation.

    offsets has length dst_count+1; src[offsets[v]:offsets[v+1]] are the
    source node ids of v's in-edges. The edge id of the k-th stored edge is
    simply k (edge features are stored in the same order).
    """

    offsets: np.ndarray  # int64, nondecreasing
    src: np.ndarray      # int64

    @property
    def num_edges(self):
        return int(self.offsets[-1])

    def in_degree(self, node_id):
        return int(self.offsets[node_id + 1] - self.offsets[node_id])


@dataclass(frozen=True)
class LabelTable:
    """Binary labels and split assignment for a subset of user nodes."""

    node_ids: np.ndarray  # int64, sorted unique
    y: np.ndarray         # uint8 in {0,1}
    split: np.ndarray     # uint8 in {0:train, 1:val, 2:test}

    def ids_for_split(self, split_name):
        code = SPLIT_NAMES[split_name]
        mask = self.split == code
        return self.node_ids[mask], self.y[mask]


@dataclass(frozen=True)
class HeteroGraph:
    node_types: tuple
    relations: tuple
    node_features: dict       # type name -> (count, d_t) float64
    adjacency: dict           # relation name -> CSRAdjacency
    edge_features: dict       # relation name -> (E, d_r) float64
    user_type: str
    labels: LabelTable | None = None
    _type_index: dict = field(default=None, repr=False)
    _rel_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_type_index", {t.name: t for t in self.node_types})
        object.__setattr__(self, "_rel_index", {r.name: r for r in self.relations})

    def node_type(self, name) -> NodeTypeSpec:
        try:
            return self._type_index[name]
        except KeyError:
            raise DataError(f"unknown node type {name!r}")

    def relation(self, name) -> RelationSpec:
        try:
            return self._rel_index[name]
        except KeyError:
            raise DataError(f"unknown relation {name!r}")

    def num_nodes(self, type_name):
        return self.node_type(type_name).count


def _check_features(name, feats, count, dim):
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape != (count, dim):
        raise DataError(
            f"feature table for {name!r}: expected shape ({count}, {dim}), "
            f"got {feats.shape}"
        )
    if feats.size and not np.all(np.isfinite(feats)):
        bad = np.argwhere(~np.isfinite(feats))[0]
        raise DataError(f"non-finite feature for {name!r} at row {bad[0]}, col {bad[1]}")
    return feats


def _build_csr(rel: RelationSpec, src, dst, feats, src_count, dst_count):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape or src.ndim != 1:
        raise DataError(f"relation {rel.name!r}: src/dst id arrays must be equal-length 1-d")
    n_edges = src.shape[0]
    if feats is None:
        feats = np.zeros((n_edges, rel.edge_feature_dim))
    feats = _check_features(f"edges of {rel.name}", feats, n_edges, rel.edge_feature_dim)
    if n_edges:
        if src.min() < 0 or src.max() >= src_count:
            raise DataError(
                f"relation {rel.name!r}: source id out of range for type "
                f"{rel.src_type!r} (count {src_count})"
            )
        if dst.min() < 0 or dst.max() >= dst_count:
            raise DataError(
                f"relation {rel.name!r}: destination id out of range for type "
                f"{rel.dst_type!r} (count {dst_count})"
            )
    # stable sort keeps input order within a destination
    order = np.argsort(dst, kind="stable")
    src = src[order]
    dst = dst[order]
    feats = np.ascontiguousarray(feats[order])
    offsets = np.zeros(dst_count + 1, dtype=np.int64)
    np.add.at(offsets, dst + 1, 1)
    np.cumsum(offsets, out=offsets)
    return CSRAdjacency(offsets=offsets, src=src), feats


def _build_labels(label_table, graph_user_count):
    if label_table is None:
        return None
    node_ids = np.asarray(label_table[0], dtype=np.int64)
    y = np.asarray(label_table[1], dtype=np.uint8)
    split = np.asarray(label_table[2], dtype=np.uint8)
    if not (node_ids.shape == y.shape == split.shape):
        raise DataError("label table arrays must have equal length")
    if node_ids.size:
        if node_ids.min() < 0 or node_ids.max() >= graph_user_count:
            raise DataError("label for nonexistent user node")
        if len(np.unique(node_ids)) != len(node_ids):
            raise DataError("duplicate node id in label table")
        if y.max() > 1:
            raise DataError("labels must be 0 or 1")
        if split.max() > 2:
            raise DataError("split codes must be 0 (train), 1 (val) or 2 (test)")
    order = np.argsort(node_ids)
    return LabelTable(node_ids=node_ids[order], y=y[order], split=split[order])


def build_graph(node_specs, relation_specs, node_feature_tables,
                edge_lists_with_features, label_table=None,
                user_type="user") -> HeteroGraph:
    """Validate inputs and assemble an immutable HeteroGraph.

    edge_lists_with_features maps relation name -> (src_ids, dst_ids, feats)
    where feats may be None for d_r == 0. label_table is an optional
    (node_ids, y, split) triple over nodes of user_type. Deterministic:
    identical inputs yield bit-identical storage.
    """
    node_specs = tuple(node_specs)
    relation_specs = tuple(relation_specs)
    names = [t.name for t in node_specs]
    if len(set(names)) != len(names):
        raise DataError("duplicate node type name")
    rel_names = [r.name for r in relation_specs]
    if len(set(rel_names)) != len(rel_names):
        raise DataError("duplicate relation name")
    type_index = {t.name: t for t in node_specs}
    if user_type not in type_index:
        raise DataError(f"user type {user_type!r} not declared")

    node_features = {}
    for t in node_specs:
        if t.count < 0 or t.feature_dim < 0:
            raise DataError(f"node type {t.name!r}: negative count or feature_dim")
        table = node_feature_tables.get(t.name)
        if table is None:
            table = np.zeros((t.count, t.feature_dim))
        node_features[t.name] = _check_features(t.name, table, t.count, t.feature_dim)

    adjacency = {}
    edge_features = {}
    for r in relation_specs:
        if r.src_type not in type_index or r.dst_type not in type_index:
            raise DataError(f"relation {r.name!r}: endpoint type not declared")
        src, dst, feats = edge_lists_with_features.get(r.name, ((), (), None))
        adjacency[r.name], edge_features[r.name] = _build_csr(
            r, src, dst, feats, type_index[r.src_type].count, type_index[r.dst_type].count
        )

    labels = _build_labels(label_table, type_index[user_type].count)
    return HeteroGraph(
        node_types=node_specs,
        relations=relation_specs,
        node_features=node_features,
        adjacency=adjacency,
        edge_features=edge_features,
        user_type=user_type,
        labels=labels,
    )


def in_neighbors(graph: HeteroGraph, relation_name, node_id):
    """CSR slice of (source_id, edge_id) pairs for one destination node."""
    rel = graph.relation(relation_name)
    adj = graph.adjacency[relation_name]
    if node_id < 0 or node_id >= graph.num_nodes(rel.dst_type):
        raise DataError(f"node id {node_id} out of range for type {rel.dst_type!r}")
    lo, hi = int(adj.offsets[node_id]), int(adj.offsets[node_id + 1])
    return [(int(adj.src[k]), k) for k in range(lo, hi)]


def reverse_relation(graph: HeteroGraph, relation_name, new_name) -> HeteroGraph:
    """Return a new graph with an added relation whose edges are reversed.

    Edge features are copied; the edge count is identical.
    """
    rel = graph.relation(relation_name)
    if new_name in {r.name for r in graph.relations}:
        raise DataError(f"relation name {new_name!r} already exists")
    adj = graph.adjacency[relation_name]
    # expand CSR back to (src, dst) pairs
    dst = np.repeat(np.arange(len(adj.offsets) - 1, dtype=np.int64),
                    np.diff(adj.offsets))
    new_rel = RelationSpec(name=new_name, src_type=rel.dst_type,
                           dst_type=rel.src_type,
                           edge_feature_dim=rel.edge_feature_dim)
    new_adj, new_feats = _build_csr(
        new_rel, dst, adj.src.copy(), graph.edge_features[relation_name],
        graph.num_nodes(rel.dst_type), graph.num_nodes(rel.src_type)
    )
    adjacency = dict(graph.adjacency)
    adjacency[new_name] = new_adj
    edge_features = dict(graph.edge_features)
    edge_features[new_name] = new_feats
    return HeteroGraph(
        node_types=graph.node_types,
        relations=graph.relations + (new_rel,),
        node_features=graph.node_features,
        adjacency=adjacency,
        edge_features=edge_features,
        user_type=graph.user_type,
        labels=graph.labels,
    )


def edge_pairs(graph: HeteroGraph, relation_name):
    """All (src, dst) pairs of a relation in storage order."""
    adj = graph.adjacency[relation_name]
    dst = np.repeat(np.arange(len(adj.offsets) - 1, dtype=np.int64),
                    np.diff(adj.offsets))
    return adj.src.copy(), dst


def summarize(graph: HeteroGraph) -> dict:
    """Node/edge counts and in-degree stats, used by the `inspect` command."""
    out = {"node_types": {}, "relations": {}}
    for t in graph.node_types:
        entry = {"count": t.count, "feature_dim": t.feature_dim,
                 "labeled": 0, "positive_fraction": None}
        if t.name == graph.user_type and graph.labels is not None:
            n = len(graph.labels.node_ids)
            entry["labeled"] = n
            if n:
                entry["positive_fraction"] = float(graph.labels.y.mean())
        out["node_types"][t.name] = entry
    for r in graph.relations:
        adj = graph.adjacency[r.name]
        deg = np.diff(adj.offsets)
        entry = {"src_type": r.src_type, "dst_type": r.dst_type,
                 "edge_feature_dim": r.edge_feature_dim,
                 "edges": int(adj.num_edges)}
        if len(deg):
            qs = np.quantile(deg, [0.5, 0.9, 0.99])
            entry["in_degree"] = {
                "min": int(deg.min()), "mean": float(deg.mean()),
                "max": int(deg.max()),
                "p50": float(qs[0]), "p90": float(qs[1]), "p99": float(qs[2]),
            }
        else:
            entry["in_degree"] = None
        out["relations"][r.name] = entry
    return out
