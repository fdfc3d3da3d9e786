import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from topicgraph.corpus import DocumentRecord
from topicgraph.hierarchy import TopicNode
from topicgraph.kg import (
    EntityAnnotation,
    GraphError,
    KnowledgeGraph,
    add_community_edges,
    assemble_graph,
    export_graph,
    gazetteer_match,
    ingest_annotations,
    read_jsonl,
)


def records(*ids, **kw):
    return [DocumentRecord(doc_id=i, title=f"T {i}", body=kw.get("body", "text"), **kw.get("extra", {})) for i in ids]


def one_topic_node(doc_ids):
    n = len(doc_ids)
    return TopicNode(
        node_id="root", depth=0, doc_ids=list(doc_ids), k=1,
        W=np.array([[1.0]]), H=np.ones((1, n)), assigned_ids=list(doc_ids), assignment=[0] * n,
        keywords=[[("kw", 1.0, 1.0)]],
    )


def write_ann(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


@pytest.fixture
def four_node_graph():
    return assemble_graph(records("d1", "d2"), one_topic_node(["d1", "d2"]))


class TestAnnotations:
    def test_normalization(self, tmp_path):
        ann, skipped = ingest_annotations(write_ann(tmp_path / "a.jsonl", [
            {"doc_id": "d1", "label": "Person", "text": "Alice  Smith"}]))
        assert ann == [EntityAnnotation("d1", "Person", "Alice  Smith", "alice smith")] and skipped == 0

    def test_unknown_label_skipped(self, tmp_path):
        ann, skipped = ingest_annotations(write_ann(tmp_path / "a.jsonl", [
            {"doc_id": "d1", "label": "Date", "text": "1999"}]))
        assert ann == [] and skipped == 1

    def test_casefold_dedup(self, tmp_path):
        ann, _ = ingest_annotations(write_ann(tmp_path / "a.jsonl", [
            {"doc_id": "d1", "label": "Product", "text": "MNIST"},
            {"doc_id": "d1", "label": "Product", "text": "mnist"}]))
        assert len(ann) == 1 and ann[0].normalized == "mnist"

    def test_spacy_alias(self, tmp_path):
        ann, _ = ingest_annotations(write_ann(tmp_path / "a.jsonl", [{"doc_id": "d1", "label": "GPE", "text": "Chile"}]))
        assert ann[0].label == "GeopoliticalEntity"


class TestGazetteer:
    def test_case_insensitive(self):
        docs = records("d", body="trained on MNIST digits")
        (a,) = gazetteer_match(docs, {"Product": ["mnist"]})
        assert (a.doc_id, a.label, a.normalized, a.surface) == ("d", "Product", "mnist", "MNIST")

    def test_empty(self):
        assert gazetteer_match(records("d"), {}) == []

    def test_longest_match(self):
        docs = records("d", body="flights to new york")
        out = gazetteer_match(docs, {"Location": ["new york", "york"]})
        assert [a.normalized for a in out] == ["new york"]

    def test_word_boundaries(self):
        assert gazetteer_match(records("d", body="a yorkshire pudding"), {"Location": ["york"]}) == []

    def test_bad_label(self):
        with pytest.raises(GraphError):
            gazetteer_match(records("d"), {"Weather": ["rain"]})


class TestAssemble:
    def test_four_nodes_three_edges(self, four_node_graph):
        s = four_node_graph.stats
        assert (s["Document"], s["Topic"], s["Keyword"]) == (2, 1, 1)
        assert len(four_node_graph.nodes) == 4 and len(four_node_graph.edges) == 3
        has_topic = [e for e in four_node_graph.edges.values() if e.kind == "HAS_TOPIC"]
        assert [e.weight for e in has_topic] == [1.0, 1.0]

    def test_empty_corpus(self):
        g = assemble_graph([], None)
        assert len(g.nodes) == 0 and len(g.edges) == 0

    def test_unknown_annotation_doc(self):
        with pytest.raises(GraphError, match="unknown"):
            assemble_graph(records("d1"), one_topic_node(["d1"]), [EntityAnnotation("zz", "Person", "x", "x")])

    def test_dropped_document_has_no_topic_edge(self):
        node = one_topic_node(["d1"])
        g = assemble_graph(records("d1", "d2"), node)
        assert "doc:d2" not in g.nodes

    def test_keyword_weights_per_topic_at_most_one(self):
        node = one_topic_node(["d1", "d2"])
        node.keywords = [[("a", 0.6, 0.6), ("b", 0.3, 0.3)]]
        g = assemble_graph(records("d1", "d2"), node)
        total = sum(e.weight for e in g.out_edges("topic:root/0", "HAS_KEYWORD"))
        assert total == pytest.approx(0.9)

    def test_dangling_edge_rejected(self):
        g = KnowledgeGraph()
        g.add_node("doc:a", "Document", doc_id="a")
        with pytest.raises(GraphError, match="missing"):
            g.add_edge("doc:a", "topic:x", "HAS_TOPIC", 1.0)


def _with_mentions(doc_ids, mentions):
    g = assemble_graph(records(*doc_ids), one_topic_node(doc_ids),
                       [EntityAnnotation(d, "Organization", e, e) for d, e in mentions])
    return add_community_edges(g)


class TestCommunityEdges:
    def test_triangle(self):
        g = _with_mentions(["a", "b", "c"], [("a", "e"), ("b", "e"), ("c", "e")])
        shares = [e for e in g.edges.values() if e.kind == "SHARES_ENTITY"]
        assert len(shares) == 3 and all(e.weight == 1 for e in shares)
        assert all(e.src < e.dst for e in shares)

    def test_no_shared(self):
        g = _with_mentions(["a", "b"], [("a", "e"), ("b", "f")])
        assert g.stats["SHARES_ENTITY"] == 0

    def test_shared_count(self):
        g = _with_mentions(["a", "b"], [("a", "e"), ("a", "f"), ("b", "e"), ("b", "f")])
        (e,) = [e for e in g.edges.values() if e.kind == "SHARES_ENTITY"]
        assert e.weight == 2

    def test_idempotent(self):
        g = _with_mentions(["a", "b"], [("a", "e"), ("b", "e")])
        before = dict(g.edges)
        add_community_edges(g)
        assert g.edges == before

    def test_pair_guard(self):
        g = _with_mentions(["a", "b", "c"], [("a", "e"), ("b", "e"), ("c", "e")])
        with pytest.raises(GraphError, match="max_pairs"):
            add_community_edges(g, max_pairs=2)


class TestExport:
    def test_empty_jsonl(self, tmp_path):
        export_graph(KnowledgeGraph(), "jsonl", tmp_path / "g.jsonl")
        assert (tmp_path / "g.jsonl").read_text() == ""

    def test_jsonl_order(self, four_node_graph, tmp_path):
        export_graph(four_node_graph, "jsonl", tmp_path / "g.jsonl")
        recs = [json.loads(x) for x in (tmp_path / "g.jsonl").read_text().splitlines()]
        assert [r["type"] for r in recs] == ["node"] * 4 + ["edge"] * 3
        assert [r["id"] for r in recs[:4]] == ["doc:d1", "doc:d2", "keyword:kw", "topic:root/0"]
        assert [(r["src"], r["kind"]) for r in recs[4:]] == [
            ("doc:d1", "HAS_TOPIC"), ("doc:d2", "HAS_TOPIC"), ("topic:root/0", "HAS_KEYWORD")]

    def test_round_trip(self, tmp_path):
        g = _with_mentions(["a", "b", "c"], [("a", "e"), ("b", "e"), ("c", "f")])
        export_graph(g, "jsonl", tmp_path / "g.jsonl")
        assert read_jsonl(tmp_path / "g.jsonl") == g

    def test_graphml_parses(self, four_node_graph, tmp_path):
        export_graph(four_node_graph, "graphml", tmp_path / "g.graphml")
        root = ET.parse(tmp_path / "g.graphml").getroot()
        ns = {"g": "http://graphml.graphdrawing.org/xmlns"}
        assert len(root.findall(".//g:node", ns)) == 4 and len(root.findall(".//g:edge", ns)) == 3

    def test_cypher_statement_counts(self, four_node_graph, tmp_path):
        export_graph(four_node_graph, "cypher", tmp_path / "g.cypher")
        lines = (tmp_path / "g.cypher").read_text().splitlines()
        assert sum(x.startswith("MERGE (n:") for x in lines) == 4
        assert sum(x.startswith("MATCH") for x in lines) == 3

    def test_unknown_format(self, four_node_graph, tmp_path):
        with pytest.raises(GraphError, match="unknown export format"):
            export_graph(four_node_graph, "csv", tmp_path / "g.csv")
