"""Planted-structure generators shared by unit and acceptance tests."""
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from topicgraph.corpus import TokenizedDocument


def block_matrix(seed, n_blocks=3, rows=30, cols=60, low=0.5, high=1.5):
    """Block-diagonal matrix: block b holds rows/cols of group b, values U[low, high]."""
    rng = np.random.default_rng(seed)
    A = np.zeros((rows, cols))
    r_edges = np.linspace(0, rows, n_blocks + 1).astype(int)
    c_edges = np.linspace(0, cols, n_blocks + 1).astype(int)
    for b in range(n_blocks):
        r0, r1 = r_edges[b], r_edges[b + 1]
        c0, c1 = c_edges[b], c_edges[b + 1]
        A[r0:r1, c0:c1] = rng.uniform(low, high, size=(r1 - r0, c1 - c0))
    return sp.csc_matrix(A)


def topic_corpus(seed, n_words=200, n_docs=400, n_topics=4, length=80, purity=0.85):
    """Bag-of-words documents mixing ``n_topics`` disjoint word blocks.

    Each document draws ``purity`` of its mass from its own topic's block and
    the rest from a sparse Dirichlet mixture. Returns (docs, labels).
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_docs) % n_topics)
    per = n_words // n_topics
    words = [f"w{i:03d}" for i in range(n_words)]
    docs = []
    for j in range(n_docs):
        mix = rng.dirichlet(np.full(n_topics, 0.3)) * (1 - purity)
        mix[labels[j]] += purity
        topic_of = rng.choice(n_topics, size=length, p=mix)
        docs.append(TokenizedDocument(f"d{j:03d}", [words[t * per + rng.integers(per)] for t in topic_of]))
    return docs, labels


def two_level_corpus(seed, n_docs=400, super_vocab=15, sub_vocab=60, super_draws=40, sub_draws=10):
    """2 super-topics x 2 sub-topics. Leaf label = 2 * super + sub.

    Super-topic words dominate every document; sub-topic words are rarer and
    only separate documents once the vocabulary is rebuilt inside a super-topic.
    Returns (docs, labels, doc_category) with the category naming the super-topic.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_docs) % 4)
    docs, cats = [], {}
    for j, leaf in enumerate(labels):
        sup, sub = divmod(int(leaf), 2)
        toks = [f"s{sup}_{rng.integers(super_vocab):02d}" for _ in range(super_draws)]
        toks += [f"t{sup}{sub}_{rng.integers(sub_vocab):02d}" for _ in range(sub_draws)]
        rng.shuffle(toks)
        doc_id = f"d{j:03d}"
        docs.append(TokenizedDocument(doc_id, toks))
        cats[doc_id] = f"cat{sup}"
    return docs, labels, cats


def matched_agreement(a, b) -> float:
    """Share of positions where labels agree under the best label permutation."""
    a, b = np.asarray(a), np.asarray(b)
    n = max(a.max(), b.max()) + 1
    M = np.zeros((n, n))
    np.add.at(M, (a, b), 1)
    i, j = linear_sum_assignment(-M)
    return M[i, j].sum() / len(a)
