import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seine import model as M
from seine.graph import NodeTypeSpec, RelationSpec, build_graph
from seine.sampler import full_blocks


def random_hetero_graph(rng, n_users=20, n_ents=6, d_u=5, d_e=3,
                        rel_dims=(2, 1), n_edges=(40, 25), labeled=True):
    """Small random two-relation graph: user-user and entity-user."""
    specs = [NodeTypeSpec("user", d_u, n_users),
             NodeTypeSpec("ent", d_e, n_ents)]
    rels = [RelationSpec("r-uu", "user", "user", rel_dims[0]),
            RelationSpec("r-eu", "ent", "user", rel_dims[1])]

    def edges(ns, nd, dr, m):
        src = rng.integers(0, ns, m)
        dst = rng.integers(0, nd, m)
        feats = rng.normal(size=(m, dr)) if dr else None
        return src, dst, feats

    el = {"r-uu": edges(n_users, n_users, rel_dims[0], n_edges[0]),
          "r-eu": edges(n_ents, n_users, rel_dims[1], n_edges[1])}
    feats = {"user": rng.normal(size=(n_users, d_u)),
             "ent": rng.normal(size=(n_ents, d_e))}
    labels = None
    y = rng.integers(0, 2, n_users)
    if labeled:
        labels = (np.arange(n_users), y, np.zeros(n_users, dtype=np.uint8))
    return build_graph(specs, rels, feats, el, labels), y


def kink_free_instance(seed, n_users=20, embed_dim=8, num_layers=2,
                       margin=1e-4, **hyper_kw):
    """Random graph + params whose relu pre-activations stay away from 0.

    Central finite differences step across relu kinks otherwise; retry
    with fresh seeds until all pre-activations clear the FD step size.
    """
    for attempt in range(50):
        rng = np.random.default_rng(seed * 1000 + attempt)
        graph, y = random_hetero_graph(rng, n_users=n_users)
        hyper = M.ModelHyper.from_graph(graph, embed_dim=embed_dim,
                                        num_layers=num_layers,
                                        edge_mlp_hidden=4, **hyper_kw)
        params = M.init_params(hyper, rng)
        for _, a in params.named_tensors():
            a += rng.normal(scale=0.05, size=a.shape)
        seeds = np.arange(min(10, n_users))
        labels = y[seeds].astype(float)
        blocks = full_blocks(graph, seeds, hyper.num_layers)
        _, trace = M.forward(params, graph, blocks)
        ok = True
        for lt in trace.layers:
            if np.abs(lt.z).min(initial=np.inf) < margin:
                ok = False
            for cache in lt.rel.values():
                if cache and cache["gate"] is not None:
                    if np.abs(cache["gate"]["u1"]).min(initial=np.inf) < margin:
                        ok = False
        if ok:
            return graph, params, seeds, labels, blocks
    raise RuntimeError("could not build a kink-free instance")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
