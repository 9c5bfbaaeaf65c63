"""Independent reference implementations used only by the tests.

Everything here is written the slow, obvious way (explicit loops,
threshold enumeration, BFS) and stays independent of the library code
paths it checks.
"""

import numpy as np

from seine.graph import in_neighbors

LN_EPS = 1e-5


def sigmoid_scalar(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def edge_weight_loops(w1, b1, w2, b2, xe):
    """Two-layer perceptron + logistic squash, explicit loops."""
    hidden = len(b1)
    u = [b1[i] + sum(w1[i][j] * xe[j] for j in range(len(xe)))
         for i in range(hidden)]
    r = [max(ui, 0.0) for ui in u]
    s = float(b2) + sum(w2[i] * r[i] for i in range(hidden))
    return sigmoid_scalar(s)


def dense_forward(params, graph, seeds):
    """Full-neighborhood forward pass computed node by node.

    Returns seed probabilities. Follows the layer equations directly with
    per-relation weighted means over in_neighbors(), no blocks involved.
    """
    hyper = params.hyper
    d = hyper.embed_dim
    h = {}
    for ti, t in enumerate(graph.node_types):
        feats = graph.node_features[t.name]
        for v in range(t.count):
            if feats.shape[1]:
                h[(t.name, v)] = params.w_in[t.name] @ feats[v]
            else:
                h[(t.name, v)] = np.zeros(d)
    for layer in range(hyper.num_layers):
        new_h = {}
        for t in graph.node_types:
            for v in range(t.count):
                z = params.w_self[layer] @ h[(t.name, v)]
                for rel in graph.relations:
                    if rel.dst_type != t.name:
                        continue
                    neigh = in_neighbors(graph, rel.name, v)
                    if not neigh:
                        continue
                    acc = np.zeros(d)
                    for src, eid in neigh:
                        xe = graph.edge_features[rel.name][eid]
                        if hyper.use_edge_features:
                            w = edge_weight_loops(
                                params.edge_w1[layer][rel.name],
                                params.edge_b1[layer][rel.name],
                                params.edge_w2[layer][rel.name],
                                params.edge_b2[layer][rel.name], xe)
                        else:
                            w = 1.0
                        acc += params.w_rel[layer][rel.name] @ (w * h[(rel.src_type, src)])
                    z = z + acc / len(neigh)
                if hyper.norm_position == "post_activation":
                    a = np.maximum(z, 0.0)
                    new_h[(t.name, v)] = layer_norm_rows(
                        a, params.ln_gain[layer], params.ln_bias[layer])
                elif hyper.norm_position == "pre_activation":
                    a = layer_norm_rows(z, params.ln_gain[layer],
                                        params.ln_bias[layer])
                    new_h[(t.name, v)] = np.maximum(a, 0.0)
                else:
                    new_h[(t.name, v)] = np.maximum(z, 0.0)
        h = new_h
    probs = []
    for s in seeds:
        logit = float(params.out_w @ h[(graph.user_type, int(s))] + params.out_b)
        probs.append(sigmoid_scalar(logit))
    return np.array(probs)


def layer_norm_rows(a, gain, bias):
    mu = a.mean()
    var = ((a - mu) ** 2).mean()
    return (a - mu) / np.sqrt(var + LN_EPS) * gain + bias


def roc_points_bruteforce(scores, labels):
    """Operating points by explicit threshold enumeration, O(n^2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    pts = {(0.0, 0.0)}
    for thr in np.unique(scores):
        pred = scores >= thr
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        pts.add((fp / n_neg, tp / n_pos))
    return sorted(pts)


def recall_at_fpr_bruteforce(scores, labels, fpr_max=0.01):
    best = 0.0
    for fpr, tpr in roc_points_bruteforce(scores, labels):
        if fpr <= fpr_max:
            best = max(best, tpr)
    return best


def auroc_truncated_bruteforce(scores, labels, fpr_max=0.01):
    pts = roc_points_bruteforce(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        if x0 >= fpr_max:
            break
        if x1 > fpr_max:
            y1 = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0)
            x1 = fpr_max
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area / fpr_max


def auroc_pairwise(scores, labels):
    """Mann-Whitney by counting all positive-negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    wins = np.count_nonzero(pos > neg)
    ties = np.count_nonzero(pos == neg)
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def bfs_block_edges(graph, seeds, num_layers):
    """Expected full-block edge multisets per layer, outermost-first BFS."""
    frontier = {(graph.user_type, int(s)) for s in seeds}
    layers = []
    for _ in range(num_layers):
        edges = set()
        nxt = set(frontier)
        for rel in graph.relations:
            for (tname, v) in frontier:
                if tname != rel.dst_type:
                    continue
                for src, eid in in_neighbors(graph, rel.name, v):
                    edges.add((rel.name, src, v, eid))
                    nxt.add((rel.src_type, src))
        layers.append(edges)
        frontier = nxt
    return list(reversed(layers))


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central differences over every parameter entry."""
    out = {}
    for name, arr in params.named_tensors():
        fd = np.zeros_like(arr)
        if arr.size:
            it = np.nditer(arr, flags=["multi_index"], op_flags=["readwrite"])
            while not it.finished:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                lp = loss_fn()
                arr[idx] = old - eps
                lm = loss_fn()
                arr[idx] = old
                fd[idx] = (lp - lm) / (2 * eps)
                it.iternext()
        out[name] = fd
    return out
