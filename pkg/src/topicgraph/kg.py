"""Knowledge graph of documents, topics, keywords, entities, categories
and authors, with jsonl / GraphML / Cypher export."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.etree import ElementTree as ET


from .corpus import DocumentRecord
from .hierarchy import TopicNode

logger = logging.getLogger(__name__)

ENTITY_LABELS = ("Organization", "Event", "Person", "Location", "Product", "GeopoliticalEntity")

# spaCy / OntoNotes spellings accepted on ingest
LABEL_ALIASES = {
    "ORG": "Organization",
    "EVENT": "Event",
    "PERSON": "Person",
    "LOC": "Location",
    "PRODUCT": "Product",
    "GPE": "GeopoliticalEntity",
    "Geopolitical Entity": "GeopoliticalEntity",
}

NODE_KINDS = ("Document", "Topic", "Keyword", "Entity", "Category", "Author")
EDGE_KINDS = ("HAS_TOPIC", "HAS_KEYWORD", "MENTIONS", "SHARES_ENTITY", "IN_CATEGORY", "AUTHORED_BY")
REQUIRED_ATTRS = {
    "Document": ("doc_id",),
    "Topic": ("node_path", "topic"),
    "Keyword": ("token",),
    "Entity": ("label", "normalized"),
    "Category": ("name",),
    "Author": ("name",),
}
WEIGHTED_UNIT = {"HAS_TOPIC", "HAS_KEYWORD"}

MAX_COMMUNITY_PAIRS = 10**6


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class EntityAnnotation:
    doc_id: str
    label: str
    surface: str
    normalized: str

    def __post_init__(self):
        if self.label not in ENTITY_LABELS:
            raise GraphError(f"label {self.label!r} not in {ENTITY_LABELS}")
        if not self.normalized:
            raise GraphError("empty normalized surface")


def normalize_surface(text: str) -> str:
    return " ".join(text.casefold().split())


def canonical_label(label: str) -> str | None:
    if label in ENTITY_LABELS:
        return label
    return LABEL_ALIASES.get(label)


@dataclass
class GraphNode:
    node_id: str
    kind: str
    attributes: dict = field(default_factory=dict)


@dataclass
class GraphEdge:
    src: str
    dst: str
    kind: str
    weight: float | None = None

    @property
    def key(self):
        return (self.src, self.dst, self.kind)


class KnowledgeGraph:
    """Typed property graph with referential-integrity checks on insert."""

    def __init__(self):
        self.nodes: dict[str, GraphNode] = {}
        self.edges: dict[tuple, GraphEdge] = {}

    def add_node(self, node_id: str, kind: str, **attributes) -> GraphNode:
        if kind not in NODE_KINDS:
            raise GraphError(f"unknown node kind {kind!r}")
        missing = [a for a in REQUIRED_ATTRS[kind] if a not in attributes]
        if missing:
            raise GraphError(f"{kind} node {node_id!r} lacks {missing}")
        if node_id in self.nodes:
            existing = self.nodes[node_id]
            if existing.kind != kind:
                raise GraphError(f"node {node_id!r} already exists as {existing.kind}")
            existing.attributes.update(attributes)
            return existing
        node = self.nodes[node_id] = GraphNode(node_id, kind, dict(attributes))
        return node

    def add_edge(self, src: str, dst: str, kind: str, weight: float | None = None) -> GraphEdge:
        if kind not in EDGE_KINDS:
            raise GraphError(f"unknown edge kind {kind!r}")
        for end in (src, dst):
            if end not in self.nodes:
                raise GraphError(f"edge {kind} references missing node {end!r}")
        if kind in WEIGHTED_UNIT and (weight is None or not 0 <= weight <= 1):
            raise GraphError(f"{kind} weight must lie in [0, 1], got {weight}")
        if kind == "SHARES_ENTITY" and (weight is None or weight < 1):
            raise GraphError("SHARES_ENTITY weight must be >= 1")
        edge = GraphEdge(src, dst, kind, None if weight is None else float(weight))
        self.edges[edge.key] = edge
        return edge

    def out_edges(self, node_id: str, kind: str | None = None) -> list[GraphEdge]:
        return [e for e in self.edges.values() if e.src == node_id and (kind is None or e.kind == kind)]

    @property
    def stats(self) -> dict[str, int]:
        counts = Counter(n.kind for n in self.nodes.values())
        counts.update(e.kind for e in self.edges.values())
        return {k: counts.get(k, 0) for k in NODE_KINDS + EDGE_KINDS}

    def check(self) -> None:
        for e in self.edges.values():
            if e.src not in self.nodes or e.dst not in self.nodes:
                raise GraphError(f"dangling edge {e.key}")

    def sorted_nodes(self) -> list[GraphNode]:
        return [self.nodes[k] for k in sorted(self.nodes)]

    def sorted_edges(self) -> list[GraphEdge]:
        return [self.edges[k] for k in sorted(self.edges)]

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __len__(self):
        return len(self.nodes)


# ---------------------------------------------------------------------------
# entities
# ---------------------------------------------------------------------------


def ingest_annotations(path) -> tuple[list[EntityAnnotation], int]:
    """Read ``{"doc_id", "label", "text"}`` records.

    Labels outside the six kept types are skipped. Returns the deduplicated
    annotations and the skip count.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise GraphError(f"cannot read annotations {path}: {exc}") from exc
    seen = set()
    out, skipped = [], 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if not rec.get("doc_id"):
            raise GraphError(f"{path}:{lineno}: annotation without doc_id")
        label = canonical_label(str(rec.get("label", "")))
        norm = normalize_surface(str(rec.get("text", "")))
        if label is None or not norm:
            skipped += 1
            continue
        key = (str(rec["doc_id"]), label, norm)
        if key in seen:
            continue
        seen.add(key)
        out.append(EntityAnnotation(key[0], label, str(rec["text"]), norm))
    return out, skipped


def write_annotations(annotations: Iterable[EntityAnnotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(json.dumps({"doc_id": a.doc_id, "label": a.label, "text": a.surface}) + "\n")


def load_gazetteer(paths: Mapping[str, str]) -> dict[str, list[str]]:
    """Per-label term files, one term per line."""
    gaz = {}
    for label, path in paths.items():
        canon = canonical_label(label)
        if canon is None:
            raise GraphError(f"gazetteer label {label!r} not in {ENTITY_LABELS}")
        terms = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        gaz[canon] = [t for t in terms if t and not t.startswith("#")]
    return gaz


def gazetteer_match(docs: Sequence[DocumentRecord], gazetteer: Mapping[str, Sequence[str]]) -> list[EntityAnnotation]:
    """Case-insensitive dictionary tagging over title and abstract.

    Overlaps resolve to the longest match, then the leftmost. Terms only
    match on word boundaries.
    """
    terms = []
    for label, items in gazetteer.items():
        canon = canonical_label(label)
        if canon is None:
            raise GraphError(f"gazetteer label {label!r} not in {ENTITY_LABELS}")
        for t in items:
            if not t.strip():
                raise GraphError("gazetteer terms must be non-empty")
            terms.append((normalize_surface(t), canon))
    if not terms:
        return []
    # longest alternatives first so the regex engine prefers them at each start
    terms = sorted(set(terms), key=lambda x: (-len(x[0]), x[0], x[1]))
    label_of = defaultdict(list)
    for norm, label in terms:
        label_of[norm].append(label)
    alts = "|".join(r"\s+".join(map(re.escape, norm.split())) for norm in label_of)
    pattern = re.compile(rf"(?<!\w)(?:{alts})(?!\w)", re.IGNORECASE)

    out, seen = [], set()
    for doc in docs:
        text = f"{doc.title}\n{doc.body}"
        spans = []
        for m in _all_matches(pattern, text):
            spans.append((m[0], m[1]))
        for start, end in _resolve_overlaps(spans):
            surface = text[start:end]
            norm = normalize_surface(surface)
            for label in label_of[norm]:
                key = (doc.doc_id, label, norm)
                if key not in seen:
                    seen.add(key)
                    out.append(EntityAnnotation(doc.doc_id, label, surface, norm))
    return out


def _all_matches(pattern: re.Pattern, text: str):
    """Every (start, end) the pattern matches, including overlapping starts."""
    pos = 0
    while pos <= len(text):
        m = pattern.search(text, pos)
        if m is None:
            return
        yield m.start(), m.end()
        pos = m.start() + 1


def _resolve_overlaps(spans):
    chosen = []
    for start, end in sorted(spans, key=lambda s: (-(s[1] - s[0]), s[0])):
        if all(end <= s or start >= e for s, e in chosen):
            chosen.append((start, end))
    return sorted(chosen)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def doc_node_id(doc_id: str) -> str:
    return f"doc:{doc_id}"


def topic_node_id(node_path: str, topic: int) -> str:
    return f"topic:{node_path}/{topic}"


def assemble_graph(
    docs: Sequence[DocumentRecord],
    node: TopicNode | None,
    annotations: Sequence[EntityAnnotation] = (),
) -> KnowledgeGraph:
    """Build the graph for the documents covered by one tree node.

    Documents the node dropped during vocabulary filtering carry no topic
    and are left out, along with their annotations.
    """
    g = KnowledgeGraph()
    known = {d.doc_id for d in docs}
    unknown = sorted({a.doc_id for a in annotations} - known)
    if unknown:
        raise GraphError(f"annotations reference unknown documents: {unknown[:5]}")
    if not docs or node is None or node.H is None:
        return g

    col = {d: j for j, d in enumerate(node.assigned_ids)}
    covered = [d for d in docs if d.doc_id in col]
    for topic in range(node.k):
        g.add_node(topic_node_id(node.node_id, topic), "Topic", node_path=node.node_id, topic=topic)
    for topic, kws in enumerate(node.keywords):
        tid = topic_node_id(node.node_id, topic)
        for token, _, weight in kws:
            kid = f"keyword:{token}"
            g.add_node(kid, "Keyword", token=token)
            g.add_edge(tid, kid, "HAS_KEYWORD", weight)

    for d in covered:
        did = doc_node_id(d.doc_id)
        attrs = {"doc_id": d.doc_id, "title": d.title, "authors": list(d.authors)}
        if d.year is not None:
            attrs["year"] = d.year
        if d.doi:
            attrs["doi"] = d.doi
        if d.primary_category:
            attrs["primary_category"] = d.primary_category
        for k, v in sorted(d.extra.items()):
            if isinstance(v, (str, int, float, bool)):
                attrs.setdefault(k, v)
        g.add_node(did, "Document", **attrs)

        j = col[d.doc_id]
        h = node.H[:, j]
        topic = node.assignment[j]
        total = h.sum()
        g.add_edge(did, topic_node_id(node.node_id, topic), "HAS_TOPIC",
                   float(h[topic] / total) if total > 0 else 0.0)
        for cat in d.categories:
            cid = f"category:{cat}"
            g.add_node(cid, "Category", name=cat)
            g.add_edge(did, cid, "IN_CATEGORY")
        for author in d.authors:
            aid = f"author:{author}"
            g.add_node(aid, "Author", name=author)
            g.add_edge(did, aid, "AUTHORED_BY")

    for a in annotations:
        if a.doc_id not in col:
            continue
        eid = f"entity:{a.label}:{a.normalized}"
        g.add_node(eid, "Entity", label=a.label, normalized=a.normalized)
        g.add_edge(doc_node_id(a.doc_id), eid, "MENTIONS")
    g.check()
    return g


def add_community_edges(g: KnowledgeGraph, max_pairs: int = MAX_COMMUNITY_PAIRS) -> KnowledgeGraph:
    """Link every document pair that mentions a common entity.

    Edge weight is the number of shared entities; the source is the
    lexicographically smaller document id. Running it twice changes nothing.
    """
    docs_of = defaultdict(set)
    for e in g.edges.values():
        if e.kind == "MENTIONS":
            docs_of[e.dst].add(e.src)
    n_pairs = sum(len(s) * (len(s) - 1) // 2 for s in docs_of.values())
    if n_pairs > max_pairs:
        raise GraphError(f"{n_pairs} candidate document pairs exceed max_pairs={max_pairs}")
    shared = Counter()
    for members in docs_of.values():
        for a, b in combinations(sorted(members), 2):
            shared[(a, b)] += 1
    for (a, b), w in sorted(shared.items()):
        g.add_edge(a, b, "SHARES_ENTITY", float(w))
    return g


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _node_record(n: GraphNode) -> dict:
    return {"type": "node", "id": n.node_id, "kind": n.kind, "attributes": n.attributes}


def _edge_record(e: GraphEdge) -> dict:
    rec = {"type": "edge", "src": e.src, "dst": e.dst, "kind": e.kind}
    if e.weight is not None:
        rec["weight"] = e.weight
    return rec


def write_jsonl(g: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in g.sorted_nodes():
            fh.write(json.dumps(_node_record(n), sort_keys=True) + "\n")
        for e in g.sorted_edges():
            fh.write(json.dumps(_edge_record(e), sort_keys=True) + "\n")


def read_jsonl(path) -> KnowledgeGraph:
    g = KnowledgeGraph()
    edges = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        rec = json.loads(line)
        if rec["type"] == "node":
            g.add_node(rec["id"], rec["kind"], **rec["attributes"])
        else:
            edges.append(rec)
    for rec in edges:
        g.add_edge(rec["src"], rec["dst"], rec["kind"], rec.get("weight"))
    return g


def _graphml_value(v):
    if isinstance(v, bool):
        return "boolean", "true" if v else "false"
    if isinstance(v, int):
        return "long", str(v)
    if isinstance(v, float):
        return "double", repr(v)
    if isinstance(v, (list, tuple)):
        return "string", json.dumps(list(v))
    return "string", str(v)


def write_graphml(g: KnowledgeGraph, path) -> None:
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    keys = {}

    def key_for(domain, name, value):
        typ, _ = _graphml_value(value)
        if (domain, name) not in keys:
            keys[(domain, name)] = (f"{domain[0]}_{name}", typ)
        return keys[(domain, name)][0]

    nodes, edges = [], []
    for n in g.sorted_nodes():
        data = [("node", "labels", n.kind)] + [("node", k, v) for k, v in sorted(n.attributes.items())]
        nodes.append((n.node_id, data))
    for i, e in enumerate(g.sorted_edges()):
        data = [("edge", "label", e.kind)]
        if e.weight is not None:
            data.append(("edge", "weight", e.weight))
        edges.append((f"e{i}", e.src, e.dst, data))
    for _, data in nodes:
        for dom, k, v in data:
            key_for(dom, k, v)
    for *_, data in edges:
        for dom, k, v in data:
            key_for(dom, k, v)
    for (dom, name), (kid, typ) in sorted(keys.items()):
        ET.SubElement(root, "key", {"id": kid, "for": dom, "attr.name": name, "attr.type": typ})
    graph = ET.SubElement(root, "graph", id="G", edgedefault="directed")
    for nid, data in nodes:
        el = ET.SubElement(graph, "node", id=nid)
        for dom, k, v in data:
            ET.SubElement(el, "data", key=keys[(dom, k)][0]).text = _graphml_value(v)[1]
    for eid, src, dst, data in edges:
        el = ET.SubElement(graph, "edge", id=eid, source=src, target=dst)
        for dom, k, v in data:
            ET.SubElement(el, "data", key=keys[(dom, k)][0]).text = _graphml_value(v)[1]
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def _cypher_literal(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_cypher_literal(x) for x in v) + "]"
    return json.dumps(str(v))


def _cypher_map(d: Mapping) -> str:
    return "{" + ", ".join(f"`{k}`: {_cypher_literal(v)}" for k, v in sorted(d.items())) + "}"


def write_cypher(g: KnowledgeGraph, path) -> None:
    """MERGE statements keyed on ``node_id``; safe to replay."""
    lines = []
    for n in g.sorted_nodes():
        lines.append(
            f"MERGE (n:{n.kind} {{node_id: {_cypher_literal(n.node_id)}}}) "
            f"SET n += {_cypher_map(n.attributes)};"
        )
    for e in g.sorted_edges():
        stmt = (
            f"MATCH (a {{node_id: {_cypher_literal(e.src)}}}), (b {{node_id: {_cypher_literal(e.dst)}}}) "
            f"MERGE (a)-[r:{e.kind}]->(b)"
        )
        if e.weight is not None:
            stmt += f" SET r.weight = {e.weight!r}"
        lines.append(stmt + ";")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


EXPORTERS = {"jsonl": write_jsonl, "graphml": write_graphml, "cypher": write_cypher}
EXTENSIONS = {"jsonl": "jsonl", "graphml": "graphml", "cypher": "cypher"}


def export_graph(g: KnowledgeGraph, fmt: str, path) -> Path:
    if fmt not in EXPORTERS:
        raise GraphError(f"unknown export format {fmt!r}; choose from {sorted(EXPORTERS)}")
    path = Path(path)
    try:
        EXPORTERS[fmt](g, path)
    except OSError as exc:
        raise GraphError(f"cannot write {path}: {exc}") from exc
    return path
