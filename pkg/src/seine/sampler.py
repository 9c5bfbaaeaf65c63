"""Per-relation neighbor sampling into layered bipartite blocks.

Blocks are built outermost-first from the seed nodes. Block l's source
frontier equals block l+1's destination frontier; the outermost
destinations are the seeds. Every destination node is included in its own
source frontier (destinations occupy the first positions), so the
self-loop term of the convolution is always computable.

Sampling is uniform without replacement, take-all when the in-degree is at
most the fanout. Randomness comes from a counter-based Philox generator
keyed by (seed, layer, relation), so results are reproducible and
independent of how callers schedule work across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import HeteroGraph

# node keys pack (type index, node id) into one int64
_KEY_SHIFT = 40


def _pack(type_idx, node_id):
    return (np.asarray(type_idx, dtype=np.int64) << _KEY_SHIFT) | np.asarray(
        node_id, dtype=np.int64)


def _unpack(keys):
    return keys >> _KEY_SHIFT, keys & ((1 << _KEY_SHIFT) - 1)


@dataclass(frozen=True)
class SampleBlock:
    layer_index: int
    dst_keys: np.ndarray   # packed (type, id), the nodes produced by this layer
    src_keys: np.ndarray   # superset of dst_keys; dst nodes occupy positions [0, n_dst)
    edges: dict            # relation name -> (local_src, local_dst, edge_id) int64 arrays

    @property
    def n_dst(self):
        return len(self.dst_keys)

    @property
    def n_src(self):
        return len(self.src_keys)

    def src_types_ids(self):
        return _unpack(self.src_keys)

    def dst_types_ids(self):
        return _unpack(self.dst_keys)


@dataclass(frozen=True)
class SampleBlockSet:
    blocks: tuple          # length = number of model layers, innermost first
    seed_keys: np.ndarray  # packed (type, id) of the seed nodes

    @property
    def input_keys(self):
        """Nodes whose raw features are needed (innermost source frontier)."""
        return self.blocks[0].src_keys if self.blocks else self.seed_keys


def _check_seeds(graph: HeteroGraph, seeds):
    seeds = np.asarray(seeds, dtype=np.int64)
    n = graph.num_nodes(graph.user_type)
    if seeds.size and (seeds.min() < 0 or seeds.max() >= n):
        raise DataError("seed node id out of range for user type")
    return seeds


def _csr_ranges(starts, counts):
    """Concatenation of arange(starts[i], starts[i]+counts[i]) per row."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offs = np.zeros(len(counts), dtype=np.int64)
    np.cumsum(counts[:-1], out=offs[1:])
    return np.repeat(starts - offs, counts) + np.arange(total, dtype=np.int64)


def _expand_layer(graph, frontier_keys, fanout, rngs):
    """One layer of expansion. fanout=None means take every in-neighbor.

    rngs maps relation name -> np.random.Generator (unused when fanout is
    None). Returns (src_keys, edges) where src_keys starts with
    frontier_keys (self inclusion) followed by the newly reached nodes in
    sorted key order.
    """
    type_names = [t.name for t in graph.node_types]
    type_idx = {n: i for i, n in enumerate(type_names)}
    f_types, f_ids = _unpack(frontier_keys)

    raw_edges = {}
    new_keys = []
    for rel in graph.relations:
        dst_ti = type_idx[rel.dst_type]
        src_ti = type_idx[rel.src_type]
        adj = graph.adjacency[rel.name]
        rng = rngs.get(rel.name) if rngs else None
        local_dst_all = np.nonzero(f_types == dst_ti)[0]
        v_ids = f_ids[local_dst_all]
        starts = adj.offsets[v_ids]
        degs = adj.offsets[v_ids + 1] - starts
        if fanout is None:
            take = _csr_ranges(starts, degs)
            dsts = np.repeat(local_dst_all, degs)
        else:
            # take-all where degree <= fanout, otherwise sample per node
            small = degs <= fanout
            take_small = _csr_ranges(starts[small], degs[small])
            dst_small = np.repeat(local_dst_all[small], degs[small])
            big_idx = np.nonzero(~small)[0]
            parts_t, parts_d = [take_small], [dst_small]
            for i in big_idx:
                sel = rng.choice(int(degs[i]), size=fanout, replace=False)
                sel.sort()
                parts_t.append(starts[i] + sel)
                parts_d.append(np.full(fanout, local_dst_all[i], dtype=np.int64))
            take = np.concatenate(parts_t)
            dsts = np.concatenate(parts_d)
        src_ids = adj.src[take]
        raw_edges[rel.name] = (_pack(src_ti, src_ids), dsts, take)
        if len(src_ids):
            new_keys.append(_pack(src_ti, src_ids))

    if new_keys:
        cand = np.unique(np.concatenate(new_keys))
        fresh = cand[~np.isin(cand, frontier_keys)]
    else:
        fresh = np.empty(0, dtype=np.int64)
    src_keys = np.concatenate([frontier_keys, fresh])

    # vectorized key -> local position lookup
    order = np.argsort(src_keys, kind="stable")
    sorted_keys = src_keys[order]
    edges = {}
    for name, (src_key_arr, local_dst, eid) in raw_edges.items():
        if len(src_key_arr):
            local_src = order[np.searchsorted(sorted_keys, src_key_arr)]
        else:
            local_src = np.empty(0, dtype=np.int64)
        edges[name] = (local_src, np.asarray(local_dst, dtype=np.int64), eid)
    return src_keys, edges


def _build_blocks(graph, seeds, num_layers, fanouts, base_seed):
    seeds = _check_seeds(graph, seeds)
    user_ti = [t.name for t in graph.node_types].index(graph.user_type)
    seed_keys = _pack(user_ti, seeds)
    frontier = seed_keys
    blocks_rev = []
    for layer in reversed(range(num_layers)):
        fanout = None if fanouts is None else fanouts[layer]
        rngs = None
        if fanout is not None and base_seed is not None:
            rngs = {
                rel.name: np.random.Generator(np.random.Philox(
                    np.random.SeedSequence(
                        entropy=[int(base_seed) & (2**63 - 1), layer, ri])))
                for ri, rel in enumerate(graph.relations)
            }
        src_keys, edges = _expand_layer(graph, frontier, fanout, rngs)
        blocks_rev.append(SampleBlock(layer_index=layer, dst_keys=frontier,
                                      src_keys=src_keys, edges=edges))
        frontier = src_keys
    return SampleBlockSet(blocks=tuple(reversed(blocks_rev)), seed_keys=seed_keys)


def sample_blocks(graph: HeteroGraph, seeds, fanouts_per_layer, rng_seed) -> SampleBlockSet:
    """Uniform without-replacement neighbor sampling, fanout per layer."""
    fanouts = list(fanouts_per_layer)
    for f in fanouts:
        if f < 1:
            raise DataError("fanout must be >= 1")
    return _build_blocks(graph, seeds, len(fanouts), fanouts, rng_seed)


def full_blocks(graph: HeteroGraph, seeds, num_layers) -> SampleBlockSet:
    """Oracle mode: include every in-neighbor at every layer."""
    return _build_blocks(graph, seeds, num_layers, None, None)
