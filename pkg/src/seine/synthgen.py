"""Synthetic labeled user-interaction graphs with calibrated collusion.

The generator plants spammer clusters that share resources: each cluster
gets a sharing mode (IP, content, or both), its members are pairwise
linked in the corresponding user-user relation with high-similarity edge
features, and the cluster concentrates its domain interactions on a small
group of spam domains. Non-spammers spread fewer total interactions over
twice as many domains, draw near-unique IPs, and pick up low-similarity
coincidental content links. Mixed and clean IP pairs are added at rates
derived from the configured conditional probabilities, so the measured
P(both spammers | IP edge) lands on target by construction.

Node features are class-conditional Gaussians with heavy overlap: a model
on user features alone is mediocre by design, and most of the label signal
lives in the planted structure. measure_stats recomputes every calibration
statistic from the graph by exact counting, closing the generate->measure
loop the tests rely on.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph import (HeteroGraph, NodeTypeSpec, RelationSpec, build_graph,
                    edge_pairs, reverse_relation)
from .ingest import (REL_DOMAIN_USER, REL_USER_CONTENT_USER, REL_USER_DOMAIN,
                     REL_USER_IP_USER, stratified_split)

USER_FEATURE_DIM = 15
DOMAIN_FEATURE_DIM = 3
# user feature column 0 is the following ratio; measure_stats relies on this
FOLLOWING_RATIO_COL = 0
# U-I-D edge features: [count, proportion of user's interactions, log1p(count)]
UD_COUNT_COL = 0
# user-user edge features: [shared entity count, Jaccard similarity]
UU_JACCARD_COL = 1


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 10_000
    spam_fraction: float = 0.095
    n_domains: int = 300
    n_spam_domains: int = 40
    n_spam_domain_clusters: int = 8
    spam_cluster_size: int = 10
    lone_spam_fraction: float = 0.15   # spammers outside any sharing cluster
    # fraction of clusters colluding via ip only / content only (rest: both)
    ip_only_cluster_fraction: float = 0.4
    content_only_cluster_fraction: float = 0.4
    following_ratio_spam: float = 0.001
    following_ratio_nonspam: float = 0.16
    following_ratio_scale: float = 0.15
    domains_per_user_spam: float = 4.0
    domain_count_ratio: float = 2.0      # non-spam distinct domains / spam
    interactions_per_user_spam: float = 60.0
    interaction_ratio: float = 0.5       # non-spam total interactions / spam
    cross_domain_rate_spam: float = 0.1  # spam picks landing on normal domains
    cross_domain_rate_nonspam: float = 0.05
    p_one_spam_ip: float = 0.027
    p_no_spam_ip: float = 0.003
    ip_jaccard_spam: float = 0.6
    ip_jaccard_noise: float = 0.05
    content_noise_factor: float = 6.0    # coincidental content pairs per spam pair
    content_jaccard_spam: float = 0.5
    content_jaccard_noise: float = 0.03
    feature_separation: float = 0.3
    train_fraction: float = 0.6
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("spam_fraction", "lone_spam_fraction", "train_fraction",
                     "val_fraction", "p_one_spam_ip", "p_no_spam_ip",
                     "ip_only_cluster_fraction", "content_only_cluster_fraction",
                     "cross_domain_rate_spam", "cross_domain_rate_nonspam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must be in [0, 1]")
        if min(self.n_users, self.n_domains, self.spam_cluster_size,
               self.n_spam_domain_clusters) < 1:
            raise DataError("counts must be >= 1")
        if self.n_spam_domains >= self.n_domains:
            raise DataError("n_spam_domains must be < n_domains")
        if self.n_spam_domain_clusters > self.n_spam_domains:
            raise DataError("more spam-domain clusters than spam domains")


@dataclass(frozen=True)
class BehaviorStats:
    following_ratio_spam: float | None
    following_ratio_nonspam: float | None
    p_both_spam_ip: float | None
    p_one_spam_ip: float | None
    p_no_spam_ip: float | None
    mean_domains_spam: float | None
    mean_domains_nonspam: float | None
    domain_count_ratio: float | None
    mean_interactions_spam: float | None
    mean_interactions_nonspam: float | None
    interaction_ratio: float | None
    spam_neighbor_fraction_spam: float | None
    spam_neighbor_fraction_nonspam: float | None
    spam_neighbor_ratio: float | None
    content_jaccard_both_spam: float | None
    content_jaccard_one_spam: float | None
    content_jaccard_no_spam: float | None

    def to_dict(self):
        return dict(self.__dict__)


def _spam_clusters(spam_ids, config, rng):
    """Partition non-lone spammers into clusters; returns (clusters, lone)."""
    n_lone = int(round(len(spam_ids) * config.lone_spam_fraction))
    shuffled = rng.permutation(spam_ids)
    lone = shuffled[:n_lone]
    clustered = shuffled[n_lone:]
    if len(clustered) and config.spam_cluster_size > len(clustered):
        raise DataError(
            f"spam_cluster_size {config.spam_cluster_size} exceeds clustered "
            f"spam population {len(clustered)}")
    clusters = [clustered[i:i + config.spam_cluster_size]
                for i in range(0, len(clustered), config.spam_cluster_size)]
    # fold a trailing singleton into the previous cluster: pairs need >= 2
    if clusters and len(clusters[-1]) < 2 and len(clusters) > 1:
        clusters[-2] = np.concatenate([clusters[-2], clusters[-1]])
        clusters.pop()
    return clusters, lone


def _pick_domain_counts(rng, chosen, total_mean):
    total = max(len(chosen), int(round(rng.normal(total_mean, 0.1 * total_mean))))
    extra = rng.multinomial(total - len(chosen), np.full(len(chosen), 1.0 / len(chosen)))
    return extra + 1


def _domain_interactions(rng, users, pool, cross_pool, k_mean, cross_rate,
                         total_mean, out, overflow_pool=None):
    """Append (user, domain, count) rows for each user's domain picks.

    Picks beyond the primary pool spill into overflow_pool (disjoint from
    pool), so a small primary pool does not truncate the per-user domain
    count distribution.
    """
    if overflow_pool is None:
        overflow_pool = np.empty(0, dtype=np.int64)
    avail = len(pool) + len(overflow_pool)
    for u in users:
        k = int(np.clip(rng.poisson(k_mean), 1, avail))
        n_cross = rng.binomial(k, cross_rate) if len(cross_pool) else 0
        n_cross = min(n_cross, len(cross_pool), k - 1) if k > 1 else 0
        n_own = k - n_cross
        take = min(n_own, len(pool))
        own = rng.choice(len(pool), size=take, replace=False)
        chosen = [pool[i] for i in own]
        if n_own > take:
            ov = rng.choice(len(overflow_pool), size=n_own - take, replace=False)
            chosen.extend(overflow_pool[i] for i in ov)
        if n_cross:
            cr = rng.choice(len(cross_pool), size=n_cross, replace=False)
            chosen.extend(cross_pool[i] for i in cr)
        counts = _pick_domain_counts(rng, chosen, total_mean)
        for d, c in zip(chosen, counts):
            out.append((int(u), int(d), int(c)))


def _pair_rows(rng, pairs, shared_mean, jacc_mean, jacc_sd):
    rows = []
    for u, v in pairs:
        shared = 1 + rng.poisson(shared_mean)
        jacc = float(np.clip(rng.normal(jacc_mean, jacc_sd), 0.005, 1.0))
        rows.append((int(u), int(v), shared, jacc))
    return rows


def _sample_pairs(rng, left_ids, right_ids, n, forbidden):
    """n distinct unordered pairs (l, r), l != r, avoiding `forbidden`."""
    out = set()
    guard = 0
    while len(out) < n and guard < 50 * (n + 1):
        guard += 1
        u = int(left_ids[rng.integers(len(left_ids))])
        v = int(right_ids[rng.integers(len(right_ids))])
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in forbidden or key in out:
            continue
        out.add(key)
    return sorted(out)


def generate(config: SynthConfig):
    """Returns (HeteroGraph with labels and splits, label array per user)."""
    ss = np.random.SeedSequence(config.seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(8)]
    (rng_label, rng_cluster, rng_domain, rng_ip, rng_content, rng_feat,
     rng_split, rng_edge) = rngs

    n = config.n_users
    n_spam = int(round(n * config.spam_fraction))
    labels = np.zeros(n, dtype=np.uint8)
    spam_ids = rng_label.choice(n, size=n_spam, replace=False)
    labels[spam_ids] = 1
    nonspam_ids = np.nonzero(labels == 0)[0]

    clusters, lone_spam = (_spam_clusters(np.sort(spam_ids), config, rng_cluster)
                           if n_spam else ([], np.empty(0, dtype=np.int64)))

    # domain roles
    domain_perm = rng_domain.permutation(config.n_domains)
    spam_domains = np.sort(domain_perm[:config.n_spam_domains])
    normal_domains = np.sort(domain_perm[config.n_spam_domains:])
    domain_groups = np.array_split(spam_domains, config.n_spam_domain_clusters)

    # user-domain interactions
    ud_rows = []
    k_spam = config.domains_per_user_spam
    k_nonspam = k_spam * config.domain_count_ratio
    t_spam = config.interactions_per_user_spam
    t_nonspam = t_spam * config.interaction_ratio
    for ci, cluster in enumerate(clusters):
        group = domain_groups[ci % len(domain_groups)]
        _domain_interactions(rng_domain, cluster, group, normal_domains,
                             k_spam, config.cross_domain_rate_spam, t_spam,
                             ud_rows,
                             overflow_pool=np.setdiff1d(spam_domains, group))
    if len(lone_spam):
        _domain_interactions(rng_domain, lone_spam, spam_domains, normal_domains,
                             k_spam, config.cross_domain_rate_spam, t_spam,
                             ud_rows)
    _domain_interactions(rng_domain, nonspam_ids, normal_domains, spam_domains,
                         k_nonspam, config.cross_domain_rate_nonspam, t_nonspam,
                         ud_rows)

    # sharing modes per cluster
    modes = []
    for _ in clusters:
        r = rng_cluster.random()
        if r < config.ip_only_cluster_fraction:
            modes.append("ip")
        elif r < config.ip_only_cluster_fraction + config.content_only_cluster_fraction:
            modes.append("content")
        else:
            modes.append("both")

    def cluster_pairs(selected_modes):
        pairs = []
        for cluster, mode in zip(clusters, modes):
            if mode in selected_modes:
                c = sorted(int(x) for x in cluster)
                pairs.extend((c[i], c[j]) for i in range(len(c))
                             for j in range(i + 1, len(c)))
        return pairs

    # U-E1-U: spam cluster pairs plus calibrated mixed / clean pairs
    ip_spam_pairs = cluster_pairs(("ip", "both"))
    p_both = 1.0 - config.p_one_spam_ip - config.p_no_spam_ip
    if p_both <= 0:
        raise DataError("p_one_spam_ip + p_no_spam_ip must be < 1")
    n_both = len(ip_spam_pairs)
    n_mixed = int(round(n_both * config.p_one_spam_ip / p_both))
    n_clean = int(round(n_both * config.p_no_spam_ip / p_both))
    forbidden = set(ip_spam_pairs)
    mixed = (_sample_pairs(rng_ip, spam_ids, nonspam_ids, n_mixed, forbidden)
             if n_both and len(nonspam_ids) else [])
    forbidden |= set(mixed)
    clean = (_sample_pairs(rng_ip, nonspam_ids, nonspam_ids, n_clean, forbidden)
             if n_both and len(nonspam_ids) > 1 else [])
    e1_rows = (
        _pair_rows(rng_ip, ip_spam_pairs, 2.0, config.ip_jaccard_spam, 0.1)
        + _pair_rows(rng_ip, mixed, 0.0, config.ip_jaccard_noise, 0.02)
        + _pair_rows(rng_ip, clean, 0.0, config.ip_jaccard_noise, 0.02)
    )

    # U-E2-U: spam recycling plus abundant coincidental shares
    content_spam_pairs = cluster_pairs(("content", "both"))
    n_coincident = int(round(len(content_spam_pairs) * config.content_noise_factor))
    all_ids = np.arange(n)
    forbidden2 = set(content_spam_pairs)
    coincident = (_sample_pairs(rng_content, all_ids, all_ids, n_coincident,
                                forbidden2) if n_coincident else [])
    e2_rows = (
        _pair_rows(rng_content, content_spam_pairs, 2.0,
                   config.content_jaccard_spam, 0.1)
        + _pair_rows(rng_content, coincident, 0.0,
                     config.content_jaccard_noise, 0.01)
    )

    # node features
    ufeat = rng_feat.normal(0.0, 1.0, size=(n, USER_FEATURE_DIM))
    fr_mean = np.where(labels == 1, config.following_ratio_spam,
                       config.following_ratio_nonspam)
    ufeat[:, FOLLOWING_RATIO_COL] = np.clip(
        rng_feat.normal(fr_mean, config.following_ratio_scale), 0.0, 1.0)
    sep = config.feature_separation
    for col in range(1, 5):
        ufeat[:, col] += np.where(labels == 1, sep / 2, -sep / 2)
    dfeat = rng_feat.normal(0.0, 1.0, size=(config.n_domains, DOMAIN_FEATURE_DIM))
    spamminess = np.full(config.n_domains, 0.35)
    spamminess[spam_domains] = 0.65
    dfeat[:, 0] = np.clip(rng_feat.normal(spamminess, 0.3), 0.0, 1.0)
    dlabel = np.zeros(config.n_domains)
    dlabel[spam_domains] = 1.0
    flip = rng_feat.random(config.n_domains) < 0.1
    dfeat[:, 1] = np.where(flip, 1.0 - dlabel, dlabel)

    # assemble edge arrays
    ud_rows.sort()
    user_totals = defaultdict(int)
    for u, d, c in ud_rows:
        user_totals[u] += c
    ud_src = np.array([r[0] for r in ud_rows], dtype=np.int64)
    ud_dst = np.array([r[1] for r in ud_rows], dtype=np.int64)
    ud_feat = np.array(
        [[c, c / user_totals[u], np.log1p(c)] for u, d, c in ud_rows],
        dtype=np.float64).reshape(len(ud_rows), 3)

    def as_directed(rows):
        src, dst, feat = [], [], []
        for u, v, shared, jacc in sorted(rows):
            for a, b in ((u, v), (v, u)):
                src.append(a)
                dst.append(b)
                feat.append([float(shared), jacc])
        return (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                np.array(feat, dtype=np.float64).reshape(len(src), 2))

    split = stratified_split(labels, config.train_fraction, config.val_fraction,
                             rng_split)

    node_specs = [NodeTypeSpec("user", USER_FEATURE_DIM, n),
                  NodeTypeSpec("domain", DOMAIN_FEATURE_DIM, config.n_domains)]
    rel_specs = [RelationSpec(REL_USER_DOMAIN, "user", "domain", 3),
                 RelationSpec(REL_USER_IP_USER, "user", "user", 2),
                 RelationSpec(REL_USER_CONTENT_USER, "user", "user", 2)]
    graph = build_graph(
        node_specs, rel_specs,
        {"user": ufeat, "domain": dfeat},
        {REL_USER_DOMAIN: (ud_src, ud_dst, ud_feat),
         REL_USER_IP_USER: as_directed(e1_rows),
         REL_USER_CONTENT_USER: as_directed(e2_rows)},
        label_table=(np.arange(n, dtype=np.int64), labels, split),
        user_type="user")
    graph = reverse_relation(graph, REL_USER_DOMAIN, REL_DOMAIN_USER)
    return graph, labels


def _undirected_pairs(graph, rel_name):
    src, dst = edge_pairs(graph, rel_name)
    mask = src < dst
    return src[mask], dst[mask], np.nonzero(mask)[0]


def _mean_or_none(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()) if values.size else None


def _ratio_or_none(a, b):
    if a is None or b is None or b == 0:
        return None
    return float(a / b)


def measure_stats(graph: HeteroGraph, labels) -> BehaviorStats:
    """Exact behavioral statistics over the four standard relations."""
    for rel in (REL_USER_DOMAIN, REL_DOMAIN_USER, REL_USER_IP_USER,
                REL_USER_CONTENT_USER):
        if rel not in {r.name for r in graph.relations}:
            raise DataError(f"missing relation {rel!r}")
    labels = np.asarray(labels).astype(np.int64)
    n_users = graph.num_nodes("user")
    if len(labels) != n_users:
        raise DataError("labels must cover every user node")
    spam_mask = labels == 1

    ufeat = graph.node_features["user"]
    fr_spam = _mean_or_none(ufeat[spam_mask, FOLLOWING_RATIO_COL]) \
        if ufeat.shape[1] else None
    fr_non = _mean_or_none(ufeat[~spam_mask, FOLLOWING_RATIO_COL]) \
        if ufeat.shape[1] else None

    # IP edge label composition
    s, d, _ = _undirected_pairs(graph, REL_USER_IP_USER)
    if len(s):
        k = labels[s] + labels[d]
        total = len(k)
        p_both = float((k == 2).sum() / total)
        p_one = float((k == 1).sum() / total)
        p_none = float((k == 0).sum() / total)
    else:
        p_both = p_one = p_none = None

    # per-user distinct domains and total interactions (U-I-D: dst = domain)
    u_src, d_dst = edge_pairs(graph, REL_USER_DOMAIN)
    counts = graph.edge_features[REL_USER_DOMAIN][:, UD_COUNT_COL]
    uniq = np.unique(np.stack([u_src, d_dst]), axis=1)
    distinct = np.bincount(uniq[0], minlength=n_users).astype(np.float64)
    totals = np.bincount(u_src, weights=counts, minlength=n_users)
    md_spam = _mean_or_none(distinct[spam_mask])
    md_non = _mean_or_none(distinct[~spam_mask])
    mi_spam = _mean_or_none(totals[spam_mask])
    mi_non = _mean_or_none(totals[~spam_mask])

    # 1-hop spam-neighbor fraction in the user-domain bipartite graph
    adj_ud = graph.adjacency[REL_USER_DOMAIN]
    domain_users = [adj_ud.src[adj_ud.offsets[i]:adj_ud.offsets[i + 1]]
                    for i in range(graph.num_nodes("domain"))]
    adj_du = graph.adjacency[REL_DOMAIN_USER]
    fracs = np.full(n_users, np.nan)
    for u in range(n_users):
        doms = adj_du.src[adj_du.offsets[u]:adj_du.offsets[u + 1]]
        if len(doms) == 0:
            continue
        neigh = np.unique(np.concatenate([domain_users[int(dd)] for dd in
                                          np.unique(doms)]))
        neigh = neigh[neigh != u]
        if len(neigh):
            fracs[u] = labels[neigh].mean()
    def mean_frac(mask):
        vals = fracs[mask]
        vals = vals[~np.isnan(vals)]
        return _mean_or_none(vals)
    snf_spam = mean_frac(spam_mask)
    snf_non = mean_frac(~spam_mask)

    # content similarity by pair label class
    cs, cd, eidx = _undirected_pairs(graph, REL_USER_CONTENT_USER)
    if len(cs):
        jacc = graph.edge_features[REL_USER_CONTENT_USER][eidx, UU_JACCARD_COL]
        k = labels[cs] + labels[cd]
        cj_both = _mean_or_none(jacc[k == 2])
        cj_one = _mean_or_none(jacc[k == 1])
        cj_none = _mean_or_none(jacc[k == 0])
    else:
        cj_both = cj_one = cj_none = None

    return BehaviorStats(
        following_ratio_spam=fr_spam,
        following_ratio_nonspam=fr_non,
        p_both_spam_ip=p_both,
        p_one_spam_ip=p_one,
        p_no_spam_ip=p_none,
        mean_domains_spam=md_spam,
        mean_domains_nonspam=md_non,
        domain_count_ratio=_ratio_or_none(md_non, md_spam),
        mean_interactions_spam=mi_spam,
        mean_interactions_nonspam=mi_non,
        interaction_ratio=_ratio_or_none(mi_non, mi_spam),
        spam_neighbor_fraction_spam=snf_spam,
        spam_neighbor_fraction_nonspam=snf_non,
        spam_neighbor_ratio=_ratio_or_none(snf_spam, snf_non),
        content_jaccard_both_spam=cj_both,
        content_jaccard_one_spam=cj_one,
        content_jaccard_no_spam=cj_none,
    )
