"""Versioned binary graph format (magic "SEINEG1").

Layout: 7 magic bytes, u64 little-endian header length, UTF-8 JSON header
(node-type table, relation table, label count), then raw arrays in header
order: per-type feature matrices (little-endian float64), per-relation CSR
offsets and source ids (little-endian u64), per-relation edge-feature
matrices (float64), and the label table (node ids u64, labels u8, splits u8).

A plain-text JSON sidecar (<path>.idmap.json) stores the external
string-id <-> dense-id mapping when a graph came from ingestion.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError
from .graph import HeteroGraph, LabelTable, NodeTypeSpec, RelationSpec, build_graph

MAGIC = b"SEINEG1"


def _write_array(f, arr, dtype):
    f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(f, count, dtype):
    nbytes = count * np.dtype(dtype).itemsize
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise DataError("truncated graph file")
    return np.frombuffer(buf, dtype=dtype).copy()


def save_graph(path, graph: HeteroGraph):
    header = {
        "version": 1,
        "user_type": graph.user_type,
        "node_types": [
            {"name": t.name, "feature_dim": t.feature_dim, "count": t.count}
            for t in graph.node_types
        ],
        "relations": [
            {"name": r.name, "src_type": r.src_type, "dst_type": r.dst_type,
             "edge_feature_dim": r.edge_feature_dim,
             "num_edges": graph.adjacency[r.name].num_edges}
            for r in graph.relations
        ],
        "num_labeled": 0 if graph.labels is None else len(graph.labels.node_ids),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for t in graph.node_types:
            _write_array(f, graph.node_features[t.name], "<f8")
        for r in graph.relations:
            adj = graph.adjacency[r.name]
            _write_array(f, adj.offsets, "<u8")
            _write_array(f, adj.src, "<u8")
        for r in graph.relations:
            _write_array(f, graph.edge_features[r.name], "<f8")
        if graph.labels is not None:
            _write_array(f, graph.labels.node_ids, "<u8")
            _write_array(f, graph.labels.y, "u1")
            _write_array(f, graph.labels.split, "u1")


def load_graph(path) -> HeteroGraph:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a SEINEG1 graph file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: corrupt header: {e}")
        node_types = [NodeTypeSpec(t["name"], t["feature_dim"], t["count"])
                      for t in header["node_types"]]
        relations = [RelationSpec(r["name"], r["src_type"], r["dst_type"],
                                  r["edge_feature_dim"])
                     for r in header["relations"]]
        feats = {}
        for t in node_types:
            feats[t.name] = _read_array(f, t.count * t.feature_dim, "<f8").reshape(
                t.count, t.feature_dim)
        csr = {}
        type_counts = {t.name: t.count for t in node_types}
        for rh, r in zip(header["relations"], relations):
            offsets = _read_array(f, type_counts[r.dst_type] + 1, "<u8").astype(np.int64)
            src = _read_array(f, rh["num_edges"], "<u8").astype(np.int64)
            csr[r.name] = (offsets, src)
        efeats = {}
        for rh, r in zip(header["relations"], relations):
            efeats[r.name] = _read_array(
                f, rh["num_edges"] * r.edge_feature_dim, "<f8"
            ).reshape(rh["num_edges"], r.edge_feature_dim)
        labels = None
        n_lab = header["num_labeled"]
        if n_lab:
            ids = _read_array(f, n_lab, "<u8").astype(np.int64)
            y = _read_array(f, n_lab, "u1")
            split = _read_array(f, n_lab, "u1")
            labels = (ids, y, split)

    # rebuild edge lists from CSR and revalidate via build_graph
    edge_lists = {}
    for r in relations:
        offsets, src = csr[r.name]
        dst = np.repeat(np.arange(len(offsets) - 1, dtype=np.int64),
                        np.diff(offsets))
        edge_lists[r.name] = (src, dst, efeats[r.name])
    return build_graph(node_types, relations, feats, edge_lists, labels,
                       user_type=header["user_type"])


def idmap_path(graph_path):
    return str(graph_path) + ".idmap.json"


def save_idmap(graph_path, idmap):
    """idmap: node type name -> {external string id: dense int id}."""
    with open(idmap_path(graph_path), "w", encoding="utf-8") as f:
        json.dump(idmap, f, sort_keys=True, indent=0)
        f.write("\n")


def load_idmap(graph_path):
    try:
        with open(idmap_path(graph_path), encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        return None
