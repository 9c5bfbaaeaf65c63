"""Edge-gated relational graph convolution encoder with exact gradients.

Per layer, for every destination node v:

    z_v = W_s h_v + sum_r (1/|N_r(v)|) sum_{e=(v',v) in N_r(v)} W_r (w_e h_v')
    h'_v = LayerNorm(relu(z_v))          (norm_position = post_activation)

where w_e = sigmoid(MLP_r(x_e)) is a scalar gate in (0,1) computed from the
edge features by a relation- and layer-specific two-layer perceptron (relu
hidden activation). Input embeddings are a plain linear projection of the
raw node features with a per-node-type matrix (no bias, no activation).
A user node's spam probability is sigmoid(w . h_u + b).

Everything is float64 numpy; backward() computes exact reverse-mode
gradients of the mean binary cross-entropy loss (plus optional L2 on the
weight matrices) and is checked against central finite differences in the
test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .sampler import SampleBlockSet, full_blocks

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"SEINEM1"

NORM_POSITIONS = ("post_activation", "pre_activation", "none")


@dataclass(frozen=True)
class ModelHyper:
    embed_dim: int = 256
    num_layers: int = 2
    edge_mlp_hidden: int = 16
    node_feat_dims: dict = field(default_factory=dict)   # type name -> d_t
    edge_feat_dims: dict = field(default_factory=dict)   # relation name -> d_r
    norm_position: str = "post_activation"
    use_edge_features: bool = True

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_layers < 0 or self.edge_mlp_hidden < 1:
            raise DataError("embed_dim/edge_mlp_hidden must be >= 1, num_layers >= 0")
        if self.norm_position not in NORM_POSITIONS:
            raise DataError(f"norm_position must be one of {NORM_POSITIONS}")

    @staticmethod
    def from_graph(graph, **kwargs):
        return ModelHyper(
            node_feat_dims={t.name: t.feature_dim for t in graph.node_types},
            edge_feat_dims={r.name: r.edge_feature_dim for r in graph.relations},
            **kwargs,
        )

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "edge_mlp_hidden": self.edge_mlp_hidden,
            "node_feat_dims": dict(self.node_feat_dims),
            "edge_feat_dims": dict(self.edge_feat_dims),
            "norm_position": self.norm_position,
            "use_edge_features": self.use_edge_features,
        }

    @staticmethod
    def from_dict(d):
        return ModelHyper(**d)


class ModelParams:
    """All learnable tensors, addressable by name in declaration order."""

    def __init__(self, hyper: ModelHyper):
        self.hyper = hyper
        d = hyper.embed_dim
        h = hyper.edge_mlp_hidden
        self.w_in = {t: np.zeros((d, dt)) for t, dt in hyper.node_feat_dims.items()}
        self.w_self = [np.zeros((d, d)) for _ in range(hyper.num_layers)]
        self.w_rel = [
            {r: np.zeros((d, d)) for r in hyper.edge_feat_dims}
            for _ in range(hyper.num_layers)
        ]
        self.edge_w1 = [
            {r: np.zeros((h, dr)) for r, dr in hyper.edge_feat_dims.items()}
            for _ in range(hyper.num_layers)
        ]
        self.edge_b1 = [
            {r: np.zeros(h) for r in hyper.edge_feat_dims}
            for _ in range(hyper.num_layers)
        ]
        self.edge_w2 = [
            {r: np.zeros(h) for r in hyper.edge_feat_dims}
            for _ in range(hyper.num_layers)
        ]
        self.edge_b2 = [
            {r: np.zeros(()) for r in hyper.edge_feat_dims}
            for _ in range(hyper.num_layers)
        ]
        self.ln_gain = [np.zeros(d) for _ in range(hyper.num_layers)]
        self.ln_bias = [np.zeros(d) for _ in range(hyper.num_layers)]
        self.out_w = np.zeros(d)
        self.out_b = np.zeros(())

    def named_tensors(self):
        """(name, array) pairs in a fixed declaration order."""
        for t in sorted(self.w_in):
            yield f"w_in.{t}", self.w_in[t]
        for l in range(self.hyper.num_layers):
            yield f"layer{l}.w_self", self.w_self[l]
            for r in sorted(self.hyper.edge_feat_dims):
                yield f"layer{l}.{r}.w_rel", self.w_rel[l][r]
                yield f"layer{l}.{r}.edge_w1", self.edge_w1[l][r]
                yield f"layer{l}.{r}.edge_b1", self.edge_b1[l][r]
                yield f"layer{l}.{r}.edge_w2", self.edge_w2[l][r]
                yield f"layer{l}.{r}.edge_b2", self.edge_b2[l][r]
            yield f"layer{l}.ln_gain", self.ln_gain[l]
            yield f"layer{l}.ln_bias", self.ln_bias[l]
        yield "out_w", self.out_w
        yield "out_b", self.out_b

    def tensor(self, name):
        for n, a in self.named_tensors():
            if n == name:
                return a
        raise KeyError(name)

    def copy(self):
        out = ModelParams(self.hyper)
        for (_, dst), (_, src) in zip(out.named_tensors(), self.named_tensors()):
            dst[...] = src
        return out

    def is_weight_matrix(self, name):
        """Tensors subject to L2 regularization (not biases or LayerNorm)."""
        return (name.startswith("w_in.") or name.endswith(".w_self")
                or name.endswith(".w_rel") or name.endswith(".edge_w1")
                or name.endswith(".edge_w2") or name == "out_w")

    def l2_penalty(self):
        return sum(float(np.sum(a * a))
                   for n, a in self.named_tensors() if self.is_weight_matrix(n))


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(hyper: ModelHyper, rng) -> ModelParams:
    """Glorot-uniform weights, zero biases, identity LayerNorm. Deterministic per seed."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    p = ModelParams(hyper)
    d, h = hyper.embed_dim, hyper.edge_mlp_hidden
    for t in sorted(p.w_in):
        dt = hyper.node_feat_dims[t]
        if dt:
            p.w_in[t][...] = _glorot(rng, (d, dt), dt, d)
    for l in range(hyper.num_layers):
        p.w_self[l][...] = _glorot(rng, (d, d), d, d)
        for r in sorted(hyper.edge_feat_dims):
            dr = hyper.edge_feat_dims[r]
            p.w_rel[l][r][...] = _glorot(rng, (d, d), d, d)
            if dr:
                p.edge_w1[l][r][...] = _glorot(rng, (h, dr), dr, h)
            p.edge_w2[l][r][...] = _glorot(rng, (h,), h, 1)
        p.ln_gain[l][...] = 1.0
    p.out_w[...] = _glorot(rng, (d,), d, 1)
    return p


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LayerTrace:
    h_in: np.ndarray
    z: np.ndarray
    a: np.ndarray            # post-relu (post_activation) or post-LN (pre_activation)
    xhat: np.ndarray | None
    inv_std: np.ndarray | None
    rel: dict                # relation -> dict of cached per-edge arrays


@dataclass
class ForwardTrace:
    blocks: SampleBlockSet
    input_types: np.ndarray
    input_ids: np.ndarray
    h0: np.ndarray
    layers: list
    h_final: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _project(params, graph, keys_types, keys_ids):
    d = params.hyper.embed_dim
    h0 = np.zeros((len(keys_ids), d))
    for ti, t in enumerate(graph.node_types):
        mask = keys_types == ti
        if not np.any(mask):
            continue
        x = graph.node_features[t.name][keys_ids[mask]]
        if x.shape[1]:
            h0[mask] = x @ params.w_in[t.name].T
    return h0


def project_inputs(params: ModelParams, graph, keys_types, keys_ids):
    """h0 = W_t x_v for a frontier given as parallel (type index, node id) arrays.

    No bias, no activation. Type indices follow graph.node_types order.
    """
    return _project(params, graph, np.asarray(keys_types, dtype=np.int64),
                    np.asarray(keys_ids, dtype=np.int64))


def _canonical_edge_order(local_src, local_dst, eid, src_keys):
    # key on the global node identity, not the local frontier position, so
    # the per-destination accumulation order does not depend on how seeds
    # were batched into blocks
    order = np.lexsort((eid, src_keys[local_src], local_dst))
    return local_src[order], local_dst[order], eid[order]


def _edge_gate_forward(params, layer, rel_name, xe):
    """w_e = sigmoid(MLP(x_e)); returns (w, cache for backward)."""
    w1 = params.edge_w1[layer][rel_name]
    b1 = params.edge_b1[layer][rel_name]
    w2 = params.edge_w2[layer][rel_name]
    b2 = params.edge_b2[layer][rel_name]
    u1 = xe @ w1.T + b1          # (E, hidden)
    r1 = np.maximum(u1, 0.0)
    s = r1 @ w2 + b2             # (E,)
    w = sigmoid(s)
    return w, {"xe": xe, "u1": u1, "r1": r1, "w": w}


def edge_weight(params: ModelParams, layer, rel_name, xe):
    """Scalar gate(s) in (0,1) for edge feature rows xe of shape (E, d_r)."""
    xe = np.atleast_2d(np.asarray(xe, dtype=np.float64))
    dr = params.hyper.edge_feat_dims[rel_name]
    if xe.shape[1] != dr:
        raise DataError(f"edge features for {rel_name!r}: expected dim {dr}, got {xe.shape[1]}")
    w, _ = _edge_gate_forward(params, layer, rel_name, xe)
    return w


def _layer_norm_forward(a, gain, bias):
    mu = a.mean(axis=1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def layer_forward(params: ModelParams, graph, layer, block, h_in):
    """One convolution layer over a sampled or full block."""
    hyper = params.hyper
    n_dst = block.n_dst
    if h_in.shape[0] != block.n_src:
        raise DataError("h_in does not cover the block's source frontier")
    # destination nodes occupy the first n_dst source positions
    z = h_in[:n_dst] @ params.w_self[layer].T
    rel_cache = {}
    for rel in graph.relations:
        ls, ld, eid = block.edges[rel.name]
        if len(eid) == 0:
            rel_cache[rel.name] = None
            continue
        # canonical order makes the aggregation independent of neighbor order
        ls, ld, eid = _canonical_edge_order(ls, ld, eid, block.src_keys)
        xe = graph.edge_features[rel.name][eid]
        if hyper.use_edge_features:
            w, gate_cache = _edge_gate_forward(params, layer, rel.name, xe)
        else:
            w = np.ones(len(eid))
            gate_cache = None
        msg = w[:, None] * h_in[ls]
        s = np.zeros((n_dst, hyper.embed_dim))
        np.add.at(s, ld, msg)
        deg = np.zeros(n_dst)
        np.add.at(deg, ld, 1.0)
        nz = deg > 0
        mean = np.zeros_like(s)
        mean[nz] = s[nz] / deg[nz, None]
        z += mean @ params.w_rel[layer][rel.name].T
        rel_cache[rel.name] = {
            "ls": ls, "ld": ld, "eid": eid, "w": w, "mean": mean, "deg": deg,
            "gate": gate_cache,
        }
    if hyper.norm_position == "post_activation":
        a = np.maximum(z, 0.0)
        h_out, xhat, inv_std = _layer_norm_forward(
            a, params.ln_gain[layer], params.ln_bias[layer])
    elif hyper.norm_position == "pre_activation":
        a, xhat, inv_std = _layer_norm_forward(
            z, params.ln_gain[layer], params.ln_bias[layer])
        h_out = np.maximum(a, 0.0)
    else:
        a = np.maximum(z, 0.0)
        h_out, xhat, inv_std = a, None, None
    return h_out, LayerTrace(h_in=h_in, z=z, a=a, xhat=xhat, inv_std=inv_std,
                             rel=rel_cache)


def _layer_backward(params, graph, layer, block, trace: LayerTrace, dh_out, grads):
    hyper = params.hyper
    n_dst = block.n_dst
    if hyper.norm_position == "post_activation":
        da, dgain, dbias = _layer_norm_backward(
            dh_out, trace.xhat, trace.inv_std, params.ln_gain[layer])
        dz = da * (trace.z > 0)
    elif hyper.norm_position == "pre_activation":
        da = dh_out * (trace.a > 0)
        dz, dgain, dbias = _layer_norm_backward(
            da, trace.xhat, trace.inv_std, params.ln_gain[layer])
    else:
        dz = dh_out * (trace.z > 0)
        dgain = np.zeros_like(params.ln_gain[layer])
        dbias = np.zeros_like(params.ln_bias[layer])
    grads.ln_gain[layer] += dgain
    grads.ln_bias[layer] += dbias

    h_in = trace.h_in
    dh_in = np.zeros_like(h_in)
    grads.w_self[layer] += dz.T @ h_in[:n_dst]
    dh_in[:n_dst] += dz @ params.w_self[layer]

    for rel in graph.relations:
        cache = trace.rel[rel.name]
        if cache is None:
            continue
        ls, ld, w = cache["ls"], cache["ld"], cache["w"]
        mean, deg = cache["mean"], cache["deg"]
        w_rel = params.w_rel[layer][rel.name]
        dmean = dz @ w_rel
        grads.w_rel[layer][rel.name] += dz.T @ mean
        ds = np.zeros_like(dmean)
        nz = deg > 0
        ds[nz] = dmean[nz] / deg[nz, None]
        dmsg = ds[ld]
        h_src = h_in[ls]
        np.add.at(dh_in, ls, dmsg * w[:, None])
        if hyper.use_edge_features:
            dw = np.sum(dmsg * h_src, axis=1)
            gate = cache["gate"]
            dsig = dw * w * (1.0 - w)
            r1, u1, xe = gate["r1"], gate["u1"], gate["xe"]
            grads.edge_w2[layer][rel.name] += r1.T @ dsig
            grads.edge_b2[layer][rel.name] += dsig.sum()
            dr1 = np.outer(dsig, params.edge_w2[layer][rel.name])
            du1 = dr1 * (u1 > 0)
            grads.edge_w1[layer][rel.name] += du1.T @ xe
            grads.edge_b1[layer][rel.name] += du1.sum(axis=0)
    return dh_in


def forward(params: ModelParams, graph, blocks: SampleBlockSet):
    """Seed spam probabilities (and a trace for backward) over a block set."""
    hyper = params.hyper
    if len(blocks.blocks) != hyper.num_layers:
        raise DataError(
            f"block set has {len(blocks.blocks)} layers, model expects {hyper.num_layers}")
    in_types, in_ids = (blocks.blocks[0].src_types_ids() if blocks.blocks
                        else _unpack_keys(blocks.seed_keys))
    h = _project(params, graph, in_types, in_ids)
    h0 = h
    layer_traces = []
    for l, block in enumerate(blocks.blocks):
        h, tr = layer_forward(params, graph, l, block, h)
        layer_traces.append(tr)
    logits = h @ params.out_w + params.out_b
    probs = sigmoid(logits)
    trace = ForwardTrace(blocks=blocks, input_types=in_types, input_ids=in_ids,
                         h0=h0, layers=layer_traces, h_final=h, logits=logits,
                         probs=probs)
    return probs, trace


def _unpack_keys(keys):
    from .sampler import _unpack
    return _unpack(keys)


def predict(params: ModelParams, h_final):
    """Spam probability from a final user embedding (row-wise)."""
    return sigmoid(np.atleast_2d(h_final) @ params.out_w + params.out_b)


def bce_loss(probs, labels):
    """Mean binary cross-entropy over a batch of probabilities in (0,1)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.size == 0:
        raise DataError("empty batch")
    return float(-np.mean(labels * np.log(probs) + (1 - labels) * np.log1p(-probs)))


def loss_from_logits(logits, labels):
    """Numerically stable BCE computed from logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.size == 0:
        raise DataError("empty batch")
    # softplus(x) - y*x, with softplus in log-sum-exp form
    sp = np.logaddexp(0.0, logits)
    return float(np.mean(sp - labels * logits))


def total_loss(params: ModelParams, trace: ForwardTrace, labels, l2_weight=0.0):
    l = loss_from_logits(trace.logits, labels)
    if l2_weight:
        l += l2_weight * params.l2_penalty()
    return l


def backward(params: ModelParams, graph, trace: ForwardTrace, labels,
             l2_weight=0.0) -> ModelParams:
    """Exact gradients of total_loss w.r.t. every parameter tensor."""
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    if trace.logits.shape[0] != n:
        raise DataError("labels do not match the traced seed batch")
    grads = ModelParams(params.hyper)
    dlogit = (trace.probs - labels) / n
    grads.out_w += trace.h_final.T @ dlogit
    grads.out_b += dlogit.sum()
    dh = np.outer(dlogit, params.out_w)
    for l in reversed(range(params.hyper.num_layers)):
        dh = _layer_backward(params, graph, l, trace.blocks.blocks[l],
                             trace.layers[l], dh, grads)
    # input projection
    for ti, nt in enumerate(graph.node_types):
        mask = trace.input_types == ti
        if not np.any(mask) or graph.node_features[nt.name].shape[1] == 0:
            continue
        x = graph.node_features[nt.name][trace.input_ids[mask]]
        grads.w_in[nt.name] += dh[mask].T @ x
    if l2_weight:
        for name, g in grads.named_tensors():
            if grads.is_weight_matrix(name):
                g += 2.0 * l2_weight * params.tensor(name)
    return grads


def score_nodes(params: ModelParams, graph, user_ids, chunk=4096):
    """Full-neighborhood probabilities for the given user nodes."""
    user_ids = np.asarray(user_ids, dtype=np.int64)
    out = np.empty(len(user_ids))
    for lo in range(0, len(user_ids), chunk):
        ids = user_ids[lo:lo + chunk]
        blocks = full_blocks(graph, ids, params.hyper.num_layers)
        probs, _ = forward(params, graph, blocks)
        out[lo:lo + len(ids)] = probs
    return out


def embed_nodes(params: ModelParams, graph, user_ids, chunk=4096):
    """Final-layer embeddings (pre output head) for the given user nodes."""
    user_ids = np.asarray(user_ids, dtype=np.int64)
    out = np.empty((len(user_ids), params.hyper.embed_dim))
    for lo in range(0, len(user_ids), chunk):
        ids = user_ids[lo:lo + chunk]
        blocks = full_blocks(graph, ids, params.hyper.num_layers)
        _, trace = forward(params, graph, blocks)
        out[lo:lo + len(ids)] = trace.h_final
    return out


def save_checkpoint(path, params: ModelParams):
    """Magic "SEINEM1", JSON hyper block, then named float64 tensors. Bit-exact."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        blob = json.dumps(params.hyper.to_dict(), sort_keys=True).encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name, arr in params.named_tensors():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for s in arr.shape:
                f.write(struct.pack("<Q", s))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a SEINEM1 checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        hyper = ModelHyper.from_dict(json.loads(f.read(hlen).decode("utf-8")))
        params = ModelParams(hyper)
        for name, arr in params.named_tensors():
            (nlen,) = struct.unpack("<H", f.read(2))
            fname = f.read(nlen).decode("utf-8")
            if fname != name:
                raise DataError(f"{path}: tensor order mismatch ({fname} != {name})")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            if shape != arr.shape:
                raise DataError(f"{path}: shape mismatch for {name}")
            count = int(np.prod(shape)) if shape else 1
            arr[...] = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
    return params
