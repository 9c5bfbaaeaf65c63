"""Turn raw interaction logs into a HeteroGraph.

Two entry points: apply_construction_rules builds the user/domain graph
with the four standard relations (U-I-D, D-I-U, U-E1-U, U-E2-U) from
interaction records, and load_relation_edge_lists loads the pre-extracted
single-node-type shape used by public fraud benchmarks.

Filtering order for the rules pipeline: drop over-popular domains first,
then recompute user interaction totals, then drop under-active users,
then threshold individual user-domain edges. Output is independent of
record order (everything is aggregated, then emitted in sorted-id order).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import (SPLIT_NAMES, HeteroGraph, NodeTypeSpec, RelationSpec,
                    build_graph, reverse_relation)

log = logging.getLogger(__name__)

ENTITY_KINDS = ("domain", "ip", "content")

REL_USER_DOMAIN = "U-I-D"
REL_DOMAIN_USER = "D-I-U"
REL_USER_IP_USER = "U-E1-U"
REL_USER_CONTENT_USER = "U-E2-U"


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    entity_kind: str
    entity_id: str
    count: int
    timestamp: float | None = None
    extra: tuple = ()

    def __post_init__(self):
        if self.entity_kind not in ENTITY_KINDS:
            raise DataError(f"unrecognized entity kind {self.entity_kind!r}")
        if self.count < 1:
            raise DataError("interaction count must be >= 1")


@dataclass(frozen=True)
class ConstructionRules:
    min_user_domain_interactions: int = 10
    max_domain_user_count: int = 10_000
    min_user_total_domain_interactions: int = 10
    ip_share_min: int = 1
    content_share_min: int = 1
    # entities shared by more than this many users are skipped for pair
    # generation to avoid quadratic blowup (they still count for Jaccard)
    entity_user_cap: int = 1000

    def __post_init__(self):
        for name in ("min_user_domain_interactions", "max_domain_user_count",
                     "min_user_total_domain_interactions", "ip_share_min",
                     "content_share_min", "entity_user_cap"):
            if getattr(self, name) < 0:
                raise DataError(f"rule {name} must be >= 0")


def _user_user_edges(entity_users, user_entities, share_min, cap, kind):
    """Undirected links between users sharing >= share_min entities.

    Returns sorted list of (u, v, shared_count, jaccard) with u < v.
    """
    shared = defaultdict(int)
    for ent in sorted(entity_users):
        users = sorted(entity_users[ent])
        if len(users) > cap:
            log.warning("skipping %s entity %r shared by %d users (cap %d)",
                        kind, ent, len(users), cap)
            continue
        for i in range(len(users)):
            for j in range(i + 1, len(users)):
                shared[(users[i], users[j])] += 1
    out = []
    for (u, v), n in sorted(shared.items()):
        if n < share_min:
            continue
        union = len(user_entities[u] | user_entities[v])
        jac = n / union if union else 0.0
        out.append((u, v, n, jac))
    return out


def apply_construction_rules(records, user_features, domain_features, labels,
                             rules: ConstructionRules = None):
    """Build the 4-relation user/domain graph from interaction records.

    user_features / domain_features: {string id: sequence of floats} with a
    consistent width per table. labels: {user string id: label} or
    {user string id: (label, split_name)}. Returns (HeteroGraph, idmap).
    """
    rules = rules or ConstructionRules()
    known_users = set(user_features)
    known_domains = set(domain_features)

    pair_counts = defaultdict(int)      # (user, domain) -> interactions
    pair_extra = {}
    ip_users = defaultdict(set)
    content_users = defaultdict(set)
    user_ips = defaultdict(set)
    user_content = defaultdict(set)

    for rec in records:
        if rec.user_id not in known_users:
            raise DataError(f"unknown user id {rec.user_id!r} in records")
        if rec.entity_kind == "domain":
            if rec.entity_id not in known_domains:
                raise DataError(f"unknown domain id {rec.entity_id!r} in records")
            key = (rec.user_id, rec.entity_id)
            pair_counts[key] += rec.count
            if rec.extra:
                prev = pair_extra.get(key)
                if prev is not None and len(prev) != len(rec.extra):
                    raise DataError(
                        f"inconsistent extra-feature width for user-domain pair {key}")
                pair_extra[key] = tuple(
                    a + b for a, b in zip(prev, rec.extra)) if prev else tuple(rec.extra)
        elif rec.entity_kind == "ip":
            ip_users[rec.entity_id].add(rec.user_id)
            user_ips[rec.user_id].add(rec.entity_id)
        else:
            content_users[rec.entity_id].add(rec.user_id)
            user_content[rec.user_id].add(rec.entity_id)

    extra_width = max((len(v) for v in pair_extra.values()), default=0)
    for key, v in pair_extra.items():
        if len(v) != extra_width:
            raise DataError(
                f"inconsistent extra-feature width for user-domain pair {key}")

    # 1. drop over-popular domains
    domain_user_count = defaultdict(int)
    for (u, d) in pair_counts:
        domain_user_count[d] += 1
    kept_domains = {d for d in known_domains
                    if domain_user_count[d] <= rules.max_domain_user_count}

    # 2. recompute user totals over kept domains, drop under-active users
    user_totals = defaultdict(int)
    for (u, d), n in pair_counts.items():
        if d in kept_domains:
            user_totals[u] += n
    kept_users = {u for u in known_users
                  if user_totals[u] >= rules.min_user_total_domain_interactions}

    # 3. threshold user-domain edges
    ud_edges = {}
    for (u, d), n in sorted(pair_counts.items()):
        if (u in kept_users and d in kept_domains
                and n >= rules.min_user_domain_interactions):
            ud_edges[(u, d)] = n
    # drop domains that lost every edge? keep them as isolated nodes only if
    # they survived the popularity cut and retain at least one interaction
    edge_totals = defaultdict(int)
    for (u, d), n in ud_edges.items():
        edge_totals[u] += n

    # 4. user-user relations over retained users
    def restrict(entity_users):
        return {e: us & kept_users for e, us in entity_users.items()
                if len(us & kept_users) >= 2}

    ip_links = _user_user_edges(restrict(ip_users), user_ips,
                                rules.ip_share_min, rules.entity_user_cap, "ip")
    content_links = _user_user_edges(restrict(content_users), user_content,
                                     rules.content_share_min,
                                     rules.entity_user_cap, "content")

    user_ids = sorted(kept_users)
    domain_ids = sorted(kept_domains)
    uidx = {u: i for i, u in enumerate(user_ids)}
    didx = {d: i for i, d in enumerate(domain_ids)}

    user_dim = len(next(iter(user_features.values()))) if user_features else 0
    domain_dim = len(next(iter(domain_features.values()))) if domain_features else 0
    ufeat = np.array([user_features[u] for u in user_ids], dtype=np.float64
                     ).reshape(len(user_ids), user_dim)
    dfeat = np.array([domain_features[d] for d in domain_ids], dtype=np.float64
                     ).reshape(len(domain_ids), domain_dim)

    # U-I-D edge features: count, proportion of the user's retained
    # interactions going to this domain, then pass-through extras
    ud_src, ud_dst, ud_feat = [], [], []
    for (u, d), n in sorted(ud_edges.items()):
        ud_src.append(uidx[u])
        ud_dst.append(didx[d])
        row = [float(n), n / edge_totals[u]]
        extras = pair_extra.get((u, d), (0.0,) * extra_width)
        row.extend(extras)
        ud_feat.append(row)
    ud_feat = np.array(ud_feat, dtype=np.float64).reshape(len(ud_src), 2 + extra_width)

    def directed(links):
        src, dst, feat = [], [], []
        for u, v, n, jac in links:
            for a, b in ((u, v), (v, u)):
                src.append(uidx[a])
                dst.append(uidx[b])
                feat.append([float(n), jac])
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                np.array(feat, dtype=np.float64).reshape(len(src), 2))

    e1 = directed(ip_links)
    e2 = directed(content_links)

    label_rows = ([], [], [])
    for ext_id in sorted(labels or {}):
        val = labels[ext_id]
        y, split = (val if isinstance(val, tuple) else (val, "train"))
        if ext_id not in uidx:
            if ext_id not in known_users:
                raise DataError(f"label for nonexistent user {ext_id!r}")
            continue  # labeled user filtered out by the activity rules
        label_rows[0].append(uidx[ext_id])
        label_rows[1].append(int(y))
        label_rows[2].append(SPLIT_NAMES[split])

    node_specs = [NodeTypeSpec("user", user_dim, len(user_ids)),
                  NodeTypeSpec("domain", domain_dim, len(domain_ids))]
    rel_specs = [
        RelationSpec(REL_USER_DOMAIN, "user", "domain", 2 + extra_width),
        RelationSpec(REL_USER_IP_USER, "user", "user", 2),
        RelationSpec(REL_USER_CONTENT_USER, "user", "user", 2),
    ]
    graph = build_graph(
        node_specs, rel_specs,
        {"user": ufeat, "domain": dfeat},
        {REL_USER_DOMAIN: (np.array(ud_src, dtype=np.int64),
                           np.array(ud_dst, dtype=np.int64), ud_feat),
         REL_USER_IP_USER: e1, REL_USER_CONTENT_USER: e2},
        label_table=label_rows if label_rows[0] else None,
        user_type="user")
    graph = reverse_relation(graph, REL_USER_DOMAIN, REL_DOMAIN_USER)
    idmap = {"user": uidx, "domain": didx}
    return graph, idmap


def time_split(records, boundary_timestamp):
    """Train window strictly before the boundary, test at/after it."""
    train, test = [], []
    for rec in records:
        if rec.timestamp is None:
            raise DataError(f"record for user {rec.user_id!r} has no timestamp")
        (train if rec.timestamp < boundary_timestamp else test).append(rec)
    if not test:
        log.warning("time_split: empty test window (boundary %s)", boundary_timestamp)
    return train, test


def _stratified_counts(total_per_class, n_target):
    """Per-class allocation summing exactly to n_target, largest remainder."""
    classes = sorted(total_per_class)
    total = sum(total_per_class.values())
    raw = {c: total_per_class[c] * n_target / total for c in classes}
    counts = {c: int(raw[c]) for c in classes}
    rem = n_target - sum(counts.values())
    by_frac = sorted(classes, key=lambda c: raw[c] - counts[c], reverse=True)
    for c in by_frac[:rem]:
        counts[c] += 1
    return counts


def stratified_split(labels_y, train_fraction, val_fraction, rng):
    """Split codes (0/1/2) per labeled node, stratified by class."""
    labels_y = np.asarray(labels_y)
    n = len(labels_y)
    split = np.full(n, SPLIT_NAMES["test"], dtype=np.uint8)
    per_class = {c: int((labels_y == c).sum()) for c in np.unique(labels_y)}
    n_train = int(train_fraction * n)
    n_val = int(round(val_fraction * n))
    train_counts = _stratified_counts(per_class, n_train)
    remaining = {c: per_class[c] - train_counts[c] for c in per_class}
    val_counts = _stratified_counts(remaining, min(n_val, sum(remaining.values())))
    for c in sorted(per_class):
        idx = rng.permutation(np.nonzero(labels_y == c)[0])
        k = train_counts[c]
        split[idx[:k]] = SPLIT_NAMES["train"]
        split[idx[k:k + val_counts[c]]] = SPLIT_NAMES["val"]
    return split


def load_relation_edge_lists(node_count, relation_files, label_file,
                             feature_file=None, train_fraction=0.4,
                             val_fraction=0.1, seed=0) -> HeteroGraph:
    """Load a single-node-type graph from 'src dst' edge-list files.

    relation_files: {relation name: path}. Edge features are
    zero-dimensional. Labels get a stratified train/val/test assignment
    unless the label file carries an explicit split column.
    """
    feats = np.zeros((node_count, 0))
    if feature_file:
        ids, rows = [], []
        for lineno, parts in _iter_tsv(feature_file):
            try:
                ids.append(int(parts[0]))
                rows.append([float(x) for x in parts[1:]])
            except ValueError as e:
                raise DataError(f"{feature_file}:{lineno}: {e}")
        feats = np.zeros((node_count, len(rows[0]) if rows else 0))
        for i, row in zip(ids, rows):
            if not 0 <= i < node_count:
                raise DataError(f"{feature_file}: node id {i} out of range")
            feats[i] = row

    edge_lists = {}
    rel_specs = []
    for name in relation_files:
        path = relation_files[name]
        src, dst = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'src dst'")
                try:
                    s, d = int(parts[0]), int(parts[1])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-integer node id")
                if not (0 <= s < node_count and 0 <= d < node_count):
                    raise DataError(f"{path}:{lineno}: node id out of range")
                src.append(s)
                dst.append(d)
        rel_specs.append(RelationSpec(name, "user", "user", 0))
        edge_lists[name] = (np.array(src, dtype=np.int64),
                            np.array(dst, dtype=np.int64), None)

    ids, ys, explicit_split = [], [], []
    has_split = None
    for lineno, parts in _iter_tsv(label_file):
        if len(parts) not in (2, 3):
            raise DataError(f"{label_file}:{lineno}: expected 'id label [split]'")
        try:
            ids.append(int(parts[0]))
            ys.append(int(parts[1]))
        except ValueError:
            raise DataError(f"{label_file}:{lineno}: malformed id/label")
        row_has_split = len(parts) == 3
        if has_split is None:
            has_split = row_has_split
        elif has_split != row_has_split:
            raise DataError(f"{label_file}:{lineno}: inconsistent split column")
        if row_has_split:
            if parts[2] not in SPLIT_NAMES:
                raise DataError(f"{label_file}:{lineno}: bad split {parts[2]!r}")
            explicit_split.append(SPLIT_NAMES[parts[2]])
    ids = np.array(ids, dtype=np.int64)
    ys = np.array(ys, dtype=np.uint8)
    if has_split:
        split = np.array(explicit_split, dtype=np.uint8)
    else:
        split = stratified_split(ys, train_fraction, val_fraction,
                                 np.random.default_rng(seed))

    node_specs = [NodeTypeSpec("user", feats.shape[1], node_count)]
    return build_graph(node_specs, rel_specs, {"user": feats}, edge_lists,
                       label_table=(ids, ys, split), user_type="user")


def _iter_tsv(path):
    """Yield (lineno, fields) for a TSV file, skipping the header row."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if lineno == 1 or not line.strip():
                continue
            yield lineno, line.rstrip("\n").split("\t")


def parse_interaction_records(path):
    """TSV with header: user_id, kind, entity_id, count, timestamp."""
    records = []
    for lineno, parts in _iter_tsv(path):
        if len(parts) < 4:
            raise DataError(f"{path}:{lineno}: expected at least 4 columns")
        try:
            count = int(parts[3])
            ts = float(parts[4]) if len(parts) > 4 and parts[4] else None
            extra = tuple(float(x) for x in parts[5:])
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}")
        try:
            records.append(InteractionRecord(parts[0], parts[1], parts[2],
                                             count, ts, extra))
        except DataError as e:
            raise DataError(f"{path}:{lineno}: {e}")
    return records


def parse_feature_table(path):
    """TSV with header: id, then numeric columns. Returns {id: tuple}."""
    out = {}
    width = None
    for lineno, parts in _iter_tsv(path):
        try:
            row = tuple(float(x) for x in parts[1:])
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} feature columns")
        out[parts[0]] = row
    return out


def parse_label_file(path):
    """TSV with header: id, label, optional split. Returns {id: (y, split)}."""
    out = {}
    for lineno, parts in _iter_tsv(path):
        if len(parts) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 'id<TAB>label[<TAB>split]'")
        try:
            y = int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed label")
        split = parts[2] if len(parts) == 3 else "train"
        if split not in SPLIT_NAMES:
            raise DataError(f"{path}:{lineno}: bad split {split!r}")
        out[parts[0]] = (y, split)
    return out
