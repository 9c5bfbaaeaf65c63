import numpy as np
import pytest

from seine.errors import DataError
from seine.graph import edge_pairs
from seine.ingest import (REL_DOMAIN_USER, REL_USER_CONTENT_USER,
                          REL_USER_DOMAIN, REL_USER_IP_USER)
from seine.synthgen import (FOLLOWING_RATIO_COL, SynthConfig, generate,
                            measure_stats)

CFG = SynthConfig(n_users=2000, spam_fraction=0.1, n_domains=120,
                  n_spam_domains=24, n_spam_domain_clusters=6, seed=11)


@pytest.fixture(scope="module")
def synth():
    graph, labels = generate(CFG)
    return graph, labels


def test_shapes_and_relations(synth):
    graph, labels = synth
    assert {r.name for r in graph.relations} == {
        REL_USER_DOMAIN, REL_DOMAIN_USER, REL_USER_IP_USER, REL_USER_CONTENT_USER}
    assert graph.num_nodes("user") == 2000
    assert graph.num_nodes("domain") == 120
    assert graph.node_features["user"].shape == (2000, 15)
    assert labels.shape == (2000,)
    assert labels.sum() == 200  # exact round of spam_fraction


def test_splits_are_stratified(synth):
    graph, labels = synth
    lt = graph.labels
    assert len(lt.node_ids) == 2000
    for name, frac in (("train", 0.6), ("val", 0.1)):
        ids, y = lt.ids_for_split(name)
        assert abs(len(ids) - frac * 2000) <= 2
        # class balance preserved
        assert abs(y.mean() - 0.1) < 0.02


def test_deterministic_per_seed():
    g1, l1 = generate(SynthConfig(n_users=300, n_domains=40, n_spam_domains=8,
                                  n_spam_domain_clusters=4, seed=3))
    g2, l2 = generate(SynthConfig(n_users=300, n_domains=40, n_spam_domains=8,
                                  n_spam_domain_clusters=4, seed=3))
    g3, l3 = generate(SynthConfig(n_users=300, n_domains=40, n_spam_domains=8,
                                  n_spam_domain_clusters=4, seed=4))
    assert np.array_equal(l1, l2)
    assert not np.array_equal(l1, l3)
    for rel in g1.relations:
        assert np.array_equal(g1.adjacency[rel.name].src,
                              g2.adjacency[rel.name].src)
        assert np.array_equal(g1.edge_features[rel.name],
                              g2.edge_features[rel.name])
    assert np.array_equal(g1.node_features["user"], g2.node_features["user"])


def test_proportion_column_sums_to_one(synth):
    graph, _ = synth
    src, _ = edge_pairs(graph, REL_USER_DOMAIN)
    props = graph.edge_features[REL_USER_DOMAIN][:, 1]
    sums = np.bincount(src, weights=props, minlength=2000)
    active = np.bincount(src, minlength=2000) > 0
    np.testing.assert_allclose(sums[active], 1.0, rtol=1e-9)


def test_ip_pair_composition_calibrated(synth):
    graph, labels = synth
    stats = measure_stats(graph, labels)
    assert stats.p_both_spam_ip == pytest.approx(0.97, abs=0.03)
    assert stats.p_one_spam_ip == pytest.approx(0.027, abs=0.02)
    assert stats.p_no_spam_ip <= 0.02


def test_domain_behavior_contrast(synth):
    graph, labels = synth
    stats = measure_stats(graph, labels)
    assert stats.domain_count_ratio == pytest.approx(2.0, abs=0.4)
    assert stats.interaction_ratio == pytest.approx(0.5, abs=0.15)
    assert stats.mean_domains_spam > 0


def test_following_ratio_separation_with_overlap(synth):
    graph, labels = synth
    stats = measure_stats(graph, labels)
    assert stats.following_ratio_spam < stats.following_ratio_nonspam
    # heavy overlap by design: a threshold on this column alone is weak
    col = graph.node_features["user"][:, FOLLOWING_RATIO_COL]
    spam, non = col[labels == 1], col[labels == 0]
    overlap = float(np.mean(spam[:, None] >= non[None, :]))
    assert 0.05 < overlap < 0.5


def test_spam_neighbor_concentration(synth):
    graph, labels = synth
    stats = measure_stats(graph, labels)
    assert stats.spam_neighbor_ratio is not None
    assert stats.spam_neighbor_ratio >= 4.0


def test_content_similarity_split_by_pair_class(synth):
    graph, labels = synth
    stats = measure_stats(graph, labels)
    # spam-spam recycling is high-similarity, coincidental shares are not
    assert stats.content_jaccard_both_spam > 0.3
    for low in (stats.content_jaccard_one_spam, stats.content_jaccard_no_spam):
        if low is not None:
            assert low < 0.1
    # coincidental links dominate in count: content edges alone cannot be
    # read as a spam signal without looking at the edge features
    s, d = edge_pairs(graph, REL_USER_CONTENT_USER)
    k = labels[s] + labels[d]
    assert (k < 2).sum() > (k == 2).sum()


def test_lone_spammers_have_no_user_links(synth):
    graph, labels = synth
    spam_ids = np.nonzero(labels == 1)[0]
    linked = set()
    for rel in (REL_USER_IP_USER, REL_USER_CONTENT_USER):
        s, d = edge_pairs(graph, rel)
        m = (labels[s] == 1) & (labels[d] == 1)
        linked.update(s[m].tolist())
    unlinked = [u for u in spam_ids if u not in linked]
    # about lone_spam_fraction of spammers sit outside every sharing cluster
    assert len(unlinked) >= 0.5 * CFG.lone_spam_fraction * len(spam_ids)


def test_config_validation():
    with pytest.raises(DataError, match="spam_fraction"):
        SynthConfig(spam_fraction=1.5)
    with pytest.raises(DataError, match="n_spam_domains"):
        SynthConfig(n_spam_domains=300, n_domains=300)
    with pytest.raises(DataError, match="clusters"):
        SynthConfig(n_spam_domains=4, n_spam_domain_clusters=5)


def test_measure_stats_input_checks(synth):
    graph, labels = synth
    with pytest.raises(DataError, match="labels"):
        measure_stats(graph, labels[:-1])
    from seine.graph import NodeTypeSpec, build_graph
    bare = build_graph([NodeTypeSpec("user", 0, 2)], [], {}, {})
    with pytest.raises(DataError, match="missing relation"):
        measure_stats(bare, np.zeros(2))


def test_tiny_population_edge_case():
    cfg = SynthConfig(n_users=40, spam_fraction=0.25, n_domains=20,
                      n_spam_domains=4, n_spam_domain_clusters=2,
                      spam_cluster_size=4, seed=0)
    graph, labels = generate(cfg)
    assert labels.sum() == 10
    stats = measure_stats(graph, labels)
    assert stats.mean_interactions_spam > 0
