"""Synthetic datasets in the ACM and DBLP schemas, plus tiny random toys.

The generators plant class structure in the relations (authors, subjects,
venues and terms lean towards one class) and give target nodes weak
bag-of-words features, so labels are only partly recoverable from a node's
own features and its immediate neighborhood.
"""

from __future__ import annotations

import numpy as np

from .data_io import Dataset, DatasetManifest
from .diffnum import make_rng
from .hin import Hin, MetaPath, Relation
from .local_schema import FeatureStore


def _pick(rng, pools, weights, home, homophily, size):
    """Draw ``size`` distinct members, each from the home pool with prob ``homophily``."""
    chosen: set[int] = set()
    all_members = np.concatenate(pools)
    all_w = np.concatenate(weights)
    all_w = all_w / all_w.sum()
    guard = 0
    while len(chosen) < size and guard < 50 * size:
        guard += 1
        if rng.random() < homophily:
            w = weights[home] / weights[home].sum()
            chosen.add(int(rng.choice(pools[home], p=w)))
        else:
            chosen.add(int(rng.choice(all_members, p=all_w)))
    return sorted(chosen)


def _bag_of_words(rng, labels, vocab, n_words, signal, topic_size):
    """Binary keyword features; a fraction ``signal`` of each node's words is class-specific."""
    num_classes = labels.max() + 1
    topics = [rng.choice(vocab, size=topic_size, replace=False) for _ in range(num_classes)]
    x = np.zeros((len(labels), vocab))
    for i, y in enumerate(labels):
        k = int(rng.integers(n_words[0], n_words[1] + 1))
        for _ in range(k):
            w = rng.choice(topics[y]) if rng.random() < signal else rng.integers(vocab)
            x[i, w] = 1.0
    return x


def _balanced_labels(rng, n, num_classes):
    return rng.permutation(np.arange(n) % num_classes)


def make_acm_like(seed: int = 0, n_papers: int = 1500, n_authors: int = 2400, n_subjects: int = 60,
                  num_classes: int = 3, vocab: int = 400, author_homophily: float = 0.8,
                  subject_homophily: float = 0.6, feature_signal: float = 0.3) -> Dataset:
    """Paper/Author/Subject network with P-A and P-S relations, PAP and PSP meta-paths."""
    rng = make_rng(seed)
    y = _balanced_labels(rng, n_papers, num_classes)
    author_home = _balanced_labels(rng, n_authors, num_classes)
    activity = rng.pareto(1.5, size=n_authors) + 1.0
    a_pools = [np.flatnonzero(author_home == c) for c in range(num_classes)]
    a_weights = [activity[p] for p in a_pools]
    subject_home = _balanced_labels(rng, n_subjects, num_classes)
    s_pools = [np.flatnonzero(subject_home == c) for c in range(num_classes)]
    s_weights = [np.ones(len(p)) for p in s_pools]

    pa, ps = [], []
    for p in range(n_papers):
        k = min(1 + int(rng.poisson(2.3)), 6)
        for a in _pick(rng, a_pools, a_weights, y[p], author_homophily, k):
            pa.append((p, a))
        ps.append((p, _pick(rng, s_pools, s_weights, y[p], subject_homophily, 1)[0]))
    x_p = _bag_of_words(rng, y, vocab, (5, 12), feature_signal, topic_size=vocab // 8)

    counts = {"P": n_papers, "A": n_authors, "S": n_subjects}
    relations = [Relation("PA", "P", "A"), Relation("PS", "P", "S")]
    edges = {"PA": np.asarray(pa, dtype=np.int64), "PS": np.asarray(ps, dtype=np.int64)}
    hin = Hin(counts, relations, edges, "P")
    features = FeatureStore({"P": x_p, "A": np.eye(n_authors), "S": np.eye(n_subjects)})
    metapaths = [MetaPath.parse("PAP", "PA ~PA"), MetaPath.parse("PSP", "PS ~PS")]
    manifest = DatasetManifest("P", num_classes,
                               {"P": (n_papers, vocab), "A": (n_authors, n_authors),
                                "S": (n_subjects, n_subjects)},
                               relations, metapaths, name=f"acm-like-{seed}")
    ids = {"P": [f"p{i}" for i in range(n_papers)], "A": [f"a{i}" for i in range(n_authors)],
           "S": [f"s{i}" for i in range(n_subjects)]}
    return Dataset(hin, features, y.astype(np.int64), manifest, ids)


def make_dblp_like(seed: int = 0, n_authors: int = 400, n_papers: int = 1000, n_terms: int = 300,
                   n_venues: int = 20, num_classes: int = 4, vocab: int = 120) -> Dataset:
    """Author/Paper/Term/Venue network with APA, APVPA and APTPA meta-paths."""
    rng = make_rng(seed)
    y = _balanced_labels(rng, n_authors, num_classes)
    a_pools = [np.flatnonzero(y == c) for c in range(num_classes)]
    a_weights = [rng.pareto(1.5, size=len(p)) + 1.0 for p in a_pools]
    venue_home = _balanced_labels(rng, n_venues, num_classes)
    v_pools = [np.flatnonzero(venue_home == c) for c in range(num_classes)]
    term_home = _balanced_labels(rng, n_terms, num_classes)
    t_pools = [np.flatnonzero(term_home == c) for c in range(num_classes)]

    pa, pt, pv = [], [], []
    paper_topic = np.empty(n_papers, dtype=np.int64)
    for p in range(n_papers):
        topic = int(rng.integers(num_classes))
        paper_topic[p] = topic
        for a in _pick(rng, a_pools, a_weights, topic, 0.8, 1 + int(rng.integers(3))):
            pa.append((a, p))
        pv.append((p, _pick(rng, v_pools, [np.ones(len(v)) for v in v_pools], topic, 0.9, 1)[0]))
        for t in _pick(rng, t_pools, [np.ones(len(t)) for t in t_pools], topic, 0.5, 4):
            pt.append((p, t))
    x_a = _bag_of_words(rng, y, vocab, (3, 8), 0.3, topic_size=vocab // 6)

    counts = {"A": n_authors, "P": n_papers, "T": n_terms, "V": n_venues}
    relations = [Relation("AP", "A", "P"), Relation("PT", "P", "T"), Relation("PV", "P", "V")]
    edges = {"AP": np.asarray(pa), "PT": np.asarray(pt), "PV": np.asarray(pv)}
    hin = Hin(counts, relations, edges, "A")
    features = FeatureStore({"A": x_a, "P": np.eye(n_papers), "T": np.eye(n_terms),
                             "V": np.eye(n_venues)})
    metapaths = [MetaPath.parse("APA", "AP ~AP"), MetaPath.parse("APVPA", "AP PV ~PV ~AP"),
                 MetaPath.parse("APTPA", "AP PT ~PT ~AP")]
    manifest = DatasetManifest("A", num_classes,
                               {t: (n, features.dim(t)) for t, n in counts.items()},
                               relations, metapaths, name=f"dblp-like-{seed}")
    ids = {t: [f"{t.lower()}{i}" for i in range(n)] for t, n in counts.items()}
    return Dataset(hin, features, y.astype(np.int64), manifest, ids)


def make_random_toy(rng: np.random.Generator, n_targets: int = 8, n_other: tuple[int, int] = (4, 3),
                    num_classes: int = 3, feat_dim: int = 5, edge_prob: float = 0.35) -> Dataset:
    """Small random T/A/B network with meta-paths TAT and TBT, dense random features."""
    na, nb = n_other
    ta = np.argwhere(rng.random((n_targets, na)) < edge_prob)
    tb = np.argwhere(rng.random((n_targets, nb)) < edge_prob)
    counts = {"T": n_targets, "A": na, "B": nb}
    relations = [Relation("TA", "T", "A"), Relation("TB", "T", "B")]
    hin = Hin(counts, relations, {"TA": ta, "TB": tb}, "T")
    features = FeatureStore({"T": rng.uniform(-1, 1, (n_targets, feat_dim)),
                             "A": rng.uniform(-1, 1, (na, 3)), "B": np.eye(nb)})
    metapaths = [MetaPath.parse("TAT", "TA ~TA"), MetaPath.parse("TBT", "TB ~TB")]
    labels = rng.integers(num_classes, size=n_targets)
    manifest = DatasetManifest("T", num_classes,
                               {t: (n, features.dim(t)) for t, n in counts.items()},
                               relations, metapaths, name="toy")
    ids = {t: [f"{t.lower()}{i}" for i in range(n)] for t, n in counts.items()}
    return Dataset(hin, features, labels.astype(np.int64), manifest, ids)
