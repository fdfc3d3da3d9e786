"""Topic trees: document assignment by H-clustering and recursive
re-factorization of each topic's documents."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CorpusError, TokenizedDocument, Vocabulary, build_vocabulary, restrict
from .matrices import CooccurrenceConfig, build_category_matrix, build_cooccurrence, build_tfidf, sppmi
from .nmf import FactorPair, relative_error
from .nmfk import derive_seed
from .split import SplitParams, run_split

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HierarchyParams:
    """Recursion limits plus the per-node vocabulary rule.

    Each node rebuilds its vocabulary from its own documents, keeping
    tokens with ``max(min_df, ceil(min_df_fraction * n)) <= df <=
    max_df_fraction * n``. ``expand`` is ``"all"`` or a mapping from node
    id to the topic indices to expand there.
    """

    max_depth: int = 1
    min_docs: int = 20
    expand: str | Mapping[str, Sequence[int]] = "all"
    min_df: int = 2
    min_df_fraction: float = 0.0
    max_df_fraction: float = 0.8
    min_tokens: int = 10
    n_keywords: int = 50
    cooccurrence: CooccurrenceConfig = field(default_factory=CooccurrenceConfig)
    use_sppmi: bool = True
    use_categories: bool = True

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_docs < 1:
            raise ValueError("min_docs must be >= 1")
        if self.expand != "all" and not isinstance(self.expand, Mapping):
            raise ValueError("expand must be 'all' or a mapping node_id -> topic list")

    def expands(self, node_id: str, topic: int) -> bool:
        if self.expand == "all":
            return True
        return topic in self.expand.get(node_id, ())


@dataclass
class TopicNode:
    node_id: str
    depth: int
    doc_ids: list[str]
    k: int = 0
    W: np.ndarray | None = None
    H: np.ndarray | None = None
    vocab: Vocabulary | None = None
    assigned_ids: list[str] = field(default_factory=list)
    assignment: list[int] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)
    keywords: list[list[tuple[str, float, float]]] = field(default_factory=list)
    children: dict[int, "TopicNode"] = field(default_factory=dict)
    rel_error: float | None = None
    note: str = ""

    def topic_docs(self, topic: int) -> list[str]:
        return [d for d, t in zip(self.assigned_ids, self.assignment) if t == topic]

    def walk(self):
        yield self
        for i in sorted(self.children):
            yield from self.children[i].walk()

    def find(self, node_id: str) -> "TopicNode":
        for n in self.walk():
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)


def h_cluster(H: np.ndarray) -> np.ndarray:
    """Topic of each document: row index of the column maximum.

    Ties go to the smallest index; an all-zero column lands in topic 0.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ValueError("H must be a (t, N) array with t >= 1")
    zero = ~np.any(H > 0, axis=0)
    if zero.any():
        logger.warning("%d documents have an all-zero topic column; assigned to topic 0", int(zero.sum()))
    return np.argmax(H, axis=0)


def top_keywords(W: np.ndarray, vocab, n: int) -> list[list[tuple[str, float, float]]]:
    """Per topic, the ``n`` heaviest tokens as ``(token, weight, weight / L1)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tokens = vocab.tokens if isinstance(vocab, Vocabulary) else list(vocab)
    out = []
    for j in range(W.shape[1]):
        col = W[:, j]
        total = col.sum()
        nz = np.flatnonzero(col > 0)
        if not nz.size:
            logger.warning("topic %d has an all-zero basis column", j)
            out.append([])
            continue
        ranked = sorted(nz, key=lambda i: (-col[i], tokens[i]))[:n]
        out.append([(tokens[i], float(col[i]), float(col[i] / total)) for i in ranked])
    return out


def node_vocabulary(docs: Sequence[TokenizedDocument], params: HierarchyParams) -> Vocabulary:
    n = len(docs)
    min_df = max(params.min_df, math.ceil(params.min_df_fraction * n))
    return build_vocabulary(docs, min_df, params.max_df_fraction, params.min_tokens)


def node_matrices(docs, params: HierarchyParams, doc_category: Mapping[str, str] | None = None):
    """Vocabulary, kept documents and the X, S, C matrices for one node.

    S or C is None when disabled or when it comes out empty.
    """
    vocab = node_vocabulary(docs, params)
    kept = restrict(docs, vocab, drop=vocab.excluded)
    if not kept:
        raise CorpusError("no documents survive the token threshold")
    X = build_tfidf(kept, vocab)
    S = C = None
    if params.use_sppmi:
        counts = build_cooccurrence(kept, vocab, params.cooccurrence.window)
        if counts.nnz:
            S = sppmi(counts, params.cooccurrence.shift)
            S = S if S.nnz else None
    if params.use_categories and doc_category:
        # uncategorized documents simply contribute nothing to C
        labelled = [d for d in kept if d.doc_id in doc_category]
        if labelled:
            C, _ = build_category_matrix(labelled, vocab, doc_category)
            C = C if C.nnz else None
    return vocab, kept, X, S, C


def _node_seed(master: int, node_id: str) -> int:
    path = [int(p) for p in node_id.split("/")[1:]]
    return derive_seed(master, len(path), *path)


def build_topic_tree(
    docs: Sequence[TokenizedDocument],
    params: HierarchyParams,
    split_params: SplitParams,
    doc_category: Mapping[str, str] | None = None,
    checkpoint_dir=None,
    root_matrices=None,
) -> TopicNode:
    """Factor the corpus, assign documents to topics and recurse into topics.

    A node turns into a leaf (with ``note`` explaining why) when its
    vocabulary or matrix comes out empty; that is not an error.
    ``root_matrices`` short-circuits the root's ``node_matrices`` call.
    """
    if not docs:
        raise ValueError("empty corpus")
    return _build_node(list(docs), "root", 0, params, split_params, doc_category, checkpoint_dir, root_matrices)


def _build_node(docs, node_id, depth, params, split_params, doc_category, checkpoint_dir, matrices=None) -> TopicNode:
    node = TopicNode(node_id=node_id, depth=depth, doc_ids=[d.doc_id for d in docs])
    try:
        vocab, kept, X, S, C = matrices or node_matrices(docs, params, doc_category)
    except (CorpusError, ValueError) as exc:
        logger.warning("node %s becomes a leaf: %s", node_id, exc)
        node.note = str(exc)
        node.dropped = list(node.doc_ids)
        return node
    node.vocab = vocab
    node.dropped = list(vocab.excluded)
    if X.nnz == 0 or X.shape[1] < 2:
        logger.warning("node %s becomes a leaf: degenerate TF-IDF matrix", node_id)
        node.note = "degenerate TF-IDF matrix"
        return node

    nmfk = split_params.nmfk.with_seed(_node_seed(split_params.nmfk.master_seed, node_id))
    ckpt = Path(checkpoint_dir) / node_id / "split" if checkpoint_dir else None
    result, _, _ = run_split(X, split_params.m, nmfk, S, C, split_params.weights, ckpt)
    node.W, node.H, node.k = result.W, result.H, result.t
    node.rel_error = relative_error(X, result.W, result.H)
    node.assigned_ids = [d.doc_id for d in kept]
    node.assignment = h_cluster(result.H).tolist()
    node.keywords = top_keywords(result.W, vocab, params.n_keywords)
    logger.info("node %s: %d docs, F=%d, k=%d", node_id, len(kept), len(vocab), node.k)

    if depth >= params.max_depth:
        return node
    by_id = {d.doc_id: d for d in docs}
    for topic in range(node.k):
        if not params.expands(node_id, topic):
            continue
        members = node.topic_docs(topic)
        if len(members) < params.min_docs:
            continue
        node.children[topic] = _build_node(
            [by_id[i] for i in members], f"{node_id}/{topic}", depth + 1,
            params, split_params, doc_category, checkpoint_dir,
        )
    return node


def category_histograms(node: TopicNode, doc_category: Mapping[str, str]) -> dict[int, Counter]:
    hist = {t: Counter() for t in range(node.k)}
    for d, t in zip(node.assigned_ids, node.assignment):
        if d in doc_category:
            hist[t][doc_category[d]] += 1
    return hist


# ---------------------------------------------------------------------------
# directory mirror
# ---------------------------------------------------------------------------


def save_tree(root: TopicNode, directory) -> None:
    """One folder per node, nested by topic index."""
    for node in root.walk():
        d = Path(directory, *node.node_id.split("/")[1:])
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "node_id": node.node_id,
            "depth": node.depth,
            "k": node.k,
            "doc_ids": node.doc_ids,
            "children": sorted(node.children),
            "rel_error": node.rel_error,
            "note": node.note,
        }
        (d / "node.json").write_text(json.dumps(meta, indent=1) + "\n")
        (d / "dropped.txt").write_text("".join(f"{x}\n" for x in node.dropped))
        if node.vocab is not None:
            (d / "vocab.tsv").write_text(
                "".join(f"{t}\t{node.vocab.df[t]}\n" for t in node.vocab.tokens)
            )
        if node.W is None:
            continue
        FactorPair(node.W, node.H, node.k, node.rel_error or 0.0).save(d)
        (d / "assignments.tsv").write_text(
            "".join(f"{i}\t{t}\n" for i, t in zip(node.assigned_ids, node.assignment))
        )
        for t, kws in enumerate(node.keywords):
            (d / f"keywords_{t}.tsv").write_text(
                "".join(f"{r}\t{tok}\t{raw!r}\t{nrm!r}\n" for r, (tok, raw, nrm) in enumerate(kws, 1))
            )


def load_tree(directory) -> TopicNode:
    return _load_node(Path(directory))


def _load_node(d: Path) -> TopicNode:
    meta = json.loads((d / "node.json").read_text())
    node = TopicNode(node_id=meta["node_id"], depth=meta["depth"], doc_ids=meta["doc_ids"],
                     k=meta["k"], rel_error=meta["rel_error"], note=meta["note"])
    node.dropped = (d / "dropped.txt").read_text().split()
    if (d / "vocab.tsv").exists():
        rows = [ln.split("\t") for ln in (d / "vocab.tsv").read_text().splitlines()]
        node.vocab = Vocabulary(tokens=[r[0] for r in rows], df={r[0]: int(r[1]) for r in rows})
    if (d / "meta.json").exists():
        fp = FactorPair.load(d)
        node.W, node.H = fp.W, fp.H
        rows = [ln.split("\t") for ln in (d / "assignments.tsv").read_text().splitlines()]
        node.assigned_ids = [r[0] for r in rows]
        node.assignment = [int(r[1]) for r in rows]
        for t in range(node.k):
            rows = [ln.split("\t") for ln in (d / f"keywords_{t}.tsv").read_text().splitlines()]
            node.keywords.append([(r[1], float(r[2]), float(r[3])) for r in rows])
    for c in meta["children"]:
        node.children[c] = _load_node(d / str(c))
    return node
