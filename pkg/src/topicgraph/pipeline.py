"""Config-driven corpus -> matrices -> topic tree -> knowledge graph run.

Each stage reads its inputs from the previous stage's checkpoint folder
under ``<output_dir>/checkpoints`` and records a manifest entry holding a
hash of everything that determines its result. A rerun skips stages whose
entry still matches and whose files are intact.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import corpus as corpus_mod
from . import hierarchy as hier
from . import kg
from .corpus import CleaningConfig, DocumentRecord, TokenizedDocument
from .matrices import CooccurrenceConfig, read_triplets, write_triplets
from .nmf import NmfParams
from .nmfk import NmfkParams
from .split import SplitParams

logger = logging.getLogger(__name__)

STAGES = ("ingest", "clean", "matrices", "hierarchy", "annotations", "graph", "export")

DEFAULTS: dict[str, Any] = {
    "corpus": {"path": None, "fields": {}},
    "cleaning": {
        "builtin_stopwords": True,
        "stopwords_file": None,
        "extra_stopwords": [],
        "stop_phrases": ["All rights reserved."],
        "min_tokens": 10,
        "join_hyphens": True,
        "lowercase": True,
        "strip_non_ascii": True,
        "lemma_file": None,
    },
    "vocabulary": {"min_df": 2, "min_df_fraction": 0.0, "max_df_fraction": 0.8},
    "cooccurrence": {"window": 100, "shift": 4.0},
    "split": {"chunks": 20, "side_weights": [1.0, 1.0], "use_sppmi": True, "use_categories": True},
    "nmfk": {
        "k_min": 1,
        "k_max": 10,
        "n_perturbs": 10,
        "perturb_epsilon": 0.015,
        "silhouette_threshold": 0.75,
        "n_jobs": 1,
    },
    "nmf": {"max_iter": 500, "tol": 1e-8, "epsilon_guard": 1e-16},
    "hierarchy": {"max_depth": 1, "min_docs": 20, "expand": "all", "n_keywords": 50},
    "entities": {"annotations": None, "gazetteer": {}},
    "graph": {"node": "root", "community_edges": True, "max_community_pairs": 1000000},
    "export": {"formats": ["jsonl", "graphml", "cypher"]},
    "output_dir": "out",
    "master_seed": 0,
}

# settings that may change freely without invalidating checkpoints
_VOLATILE = {("nmfk", "n_jobs")}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class StaleCheckpointError(RuntimeError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a key-value mapping")
        return cls.from_dict(data, path.parent.resolve())

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "PipelineConfig":
        cfg = cls(_merge(DEFAULTS, data), Path(base_dir or Path.cwd()))
        cfg.validate()
        return cfg

    def path(self, value) -> Path | None:
        if value in (None, ""):
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.raw["output_dir"])

    @property
    def seed(self) -> int:
        return int(self.raw["master_seed"])

    # -- typed views -------------------------------------------------------

    def cleaning(self) -> CleaningConfig:
        c = self.raw["cleaning"]
        words = set(c["extra_stopwords"])
        if c["builtin_stopwords"]:
            words |= corpus_mod.ENGLISH_STOPWORDS | corpus_mod.SCIENTIFIC_STOPWORDS
        if c["stopwords_file"]:
            words |= corpus_mod.load_stopwords(self.path(c["stopwords_file"]))
        lemmas = corpus_mod.load_lemma_map(self.path(c["lemma_file"])) if c["lemma_file"] else None
        return CleaningConfig(
            stopwords=frozenset(words),
            stop_phrases=tuple(c["stop_phrases"]),
            min_tokens=int(c["min_tokens"]),
            join_hyphens=bool(c["join_hyphens"]),
            lowercase=bool(c["lowercase"]),
            strip_non_ascii=bool(c["strip_non_ascii"]),
            lemma_map=lemmas,
        )

    def hierarchy(self) -> hier.HierarchyParams:
        h, v, s = self.raw["hierarchy"], self.raw["vocabulary"], self.raw["split"]
        expand = h["expand"]
        if isinstance(expand, dict):
            expand = {str(k): [int(t) for t in ts] for k, ts in expand.items()}
        return hier.HierarchyParams(
            max_depth=int(h["max_depth"]),
            min_docs=int(h["min_docs"]),
            expand=expand,
            min_df=int(v["min_df"]),
            min_df_fraction=float(v["min_df_fraction"]),
            max_df_fraction=float(v["max_df_fraction"]),
            min_tokens=int(self.raw["cleaning"]["min_tokens"]),
            n_keywords=int(h["n_keywords"]),
            cooccurrence=CooccurrenceConfig(
                window=int(self.raw["cooccurrence"]["window"]),
                shift=float(self.raw["cooccurrence"]["shift"]),
            ),
            use_sppmi=bool(s["use_sppmi"]),
            use_categories=bool(s["use_categories"]),
        )

    def split(self) -> SplitParams:
        n, k, s = self.raw["nmf"], self.raw["nmfk"], self.raw["split"]
        nmf = NmfParams(max_iter=int(n["max_iter"]), tol=float(n["tol"]), epsilon_guard=float(n["epsilon_guard"]))
        nmfk = NmfkParams(
            k_range=(int(k["k_min"]), int(k["k_max"])),
            n_perturbs=int(k["n_perturbs"]),
            perturb_epsilon=float(k["perturb_epsilon"]),
            silhouette_threshold=float(k["silhouette_threshold"]),
            nmf_params=nmf,
            master_seed=self.seed,
            n_jobs=int(k["n_jobs"]),
        )
        w = s["side_weights"]
        if len(w) != 2:
            raise ConfigError("split.side_weights needs two values (word-context, category)")
        return SplitParams(m=int(s["chunks"]), nmfk=nmfk, weights=(float(w[0]), float(w[1])))

    def validate(self) -> None:
        r = self.raw
        corpus_path = self.path(r["corpus"]["path"])
        if corpus_path is None:
            raise ConfigError("corpus.path is required")
        files = [("corpus.path", corpus_path)]
        c = r["cleaning"]
        for key in ("stopwords_file", "lemma_file"):
            if c[key]:
                files.append((f"cleaning.{key}", self.path(c[key])))
        if r["entities"]["annotations"]:
            files.append(("entities.annotations", self.path(r["entities"]["annotations"])))
        for label, p in (r["entities"]["gazetteer"] or {}).items():
            if kg.canonical_label(label) is None:
                raise ConfigError(f"entities.gazetteer: unknown label {label!r}")
            files.append((f"entities.gazetteer.{label}", self.path(p)))
        for key, p in files:
            if not p.is_file():
                raise ConfigError(f"{key}: file not found: {p}")
        bad = set(r["export"]["formats"]) - set(kg.EXPORTERS)
        if bad:
            raise ConfigError(f"export.formats: unknown {sorted(bad)}")
        try:
            self.cleaning()
            self.hierarchy()
            self.split()
            CooccurrenceConfig(int(r["cooccurrence"]["window"]), float(r["cooccurrence"]["shift"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if int(r["graph"]["max_community_pairs"]) < 0:
            raise ConfigError("graph.max_community_pairs must be >= 0")

    def section_for_hash(self, *names: str) -> dict:
        out = {}
        for n in names:
            val = copy.deepcopy(self.raw[n])
            if isinstance(val, dict):
                for sec, key in _VOLATILE:
                    if sec == n:
                        val.pop(key, None)
            out[n] = val
        return out


# ---------------------------------------------------------------------------
# hashing and manifest
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _tree_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.rglob("*") if p.is_file())


class Manifest:
    def __init__(self, path: Path):
        self.path = path
        self.entries: dict[str, dict] = {}
        if path.exists():
            data = json.loads(path.read_text())
            self.entries = {e["stage"]: e for e in data.get("stages", [])}

    def save(self) -> None:
        ordered = [self.entries[s] for s in STAGES if s in self.entries]
        self.path.write_text(json.dumps({"stages": ordered}, indent=1) + "\n")

    def outputs_intact(self, stage: str, root: Path) -> bool:
        entry = self.entries.get(stage)
        if not entry or entry.get("status") == "failed":
            return False
        for rel, digest in entry["outputs"].items():
            p = root / rel
            if not p.is_file() or file_sha256(p) != digest:
                return False
        return True


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


class Run:
    """Shared state for one pipeline invocation."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.output_dir
        self.ckpt = self.out / "checkpoints"
        self.manifest = Manifest(self.out / "manifest.json")
        self.report: list[tuple[str, str]] = []

    def stage_dir(self, stage: str) -> Path:
        if stage == "export":
            return self.out / "exports"
        return self.ckpt / stage

    # -- input fingerprints -------------------------------------------------

    def _upstream(self, *stages: str) -> dict:
        return {s: self.manifest.entries.get(s, {}).get("outputs", {}) for s in stages}

    def inputs_hash(self, stage: str) -> str:
        cfg = self.cfg
        r = cfg.raw
        if stage == "ingest":
            payload = {"corpus": r["corpus"], "file": file_sha256(cfg.path(r["corpus"]["path"]))}
        elif stage == "clean":
            c = r["cleaning"]
            payload = {
                "cleaning": c,
                "files": {k: file_sha256(cfg.path(c[k])) for k in ("stopwords_file", "lemma_file") if c[k]},
                "up": self._upstream("ingest"),
            }
        elif stage == "matrices":
            payload = {**cfg.section_for_hash("vocabulary", "cooccurrence", "split"),
                       "min_tokens": r["cleaning"]["min_tokens"], "up": self._upstream("ingest", "clean")}
        elif stage == "hierarchy":
            payload = {
                **cfg.section_for_hash("vocabulary", "cooccurrence", "split", "nmfk", "nmf", "hierarchy"),
                "min_tokens": r["cleaning"]["min_tokens"],
                "seed": cfg.seed,
                "up": self._upstream("ingest", "clean", "matrices"),
            }
        elif stage == "annotations":
            e = r["entities"]
            files = {}
            if e["annotations"]:
                files["annotations"] = file_sha256(cfg.path(e["annotations"]))
            for label, p in sorted((e["gazetteer"] or {}).items()):
                files[f"gaz:{label}"] = file_sha256(cfg.path(p))
            payload = {"entities": e, "files": files, "up": self._upstream("ingest")}
        elif stage == "graph":
            payload = {"graph": r["graph"], "up": self._upstream("ingest", "hierarchy", "annotations")}
        elif stage == "export":
            payload = {"export": r["export"], "graph": r["graph"]["node"],
                       "up": self._upstream("ingest", "hierarchy", "graph")}
        else:
            raise KeyError(stage)
        return _json_hash({"stage": stage, **payload})

    # -- loaders for checkpointed artefacts ---------------------------------

    def documents(self) -> list[DocumentRecord]:
        path = self.stage_dir("ingest") / "documents.jsonl"
        return [DocumentRecord.from_dict(json.loads(line)) for line in path.read_text().splitlines() if line]

    def tokens(self) -> list[TokenizedDocument]:
        path = self.stage_dir("clean") / "tokens.jsonl"
        out = []
        for line in path.read_text().splitlines():
            if line:
                rec = json.loads(line)
                out.append(TokenizedDocument(rec["doc_id"], rec["tokens"]))
        return out

    def doc_category(self) -> dict[str, str]:
        return {d.doc_id: d.primary_category for d in self.documents() if d.primary_category}

    def tree(self) -> hier.TopicNode:
        return hier.load_tree(self.stage_dir("hierarchy") / "tree")

    def graph(self) -> kg.KnowledgeGraph:
        return kg.read_jsonl(self.stage_dir("graph") / "graph.jsonl")

    # -- stage bodies --------------------------------------------------------

    def run_ingest(self, d: Path):
        docs = corpus_mod.load_corpus(self.cfg.path(self.cfg.raw["corpus"]["path"]), self.cfg.raw["corpus"]["fields"])
        with open(d / "documents.jsonl", "w", encoding="utf-8") as fh:
            for doc in docs:
                fh.write(json.dumps(doc.to_dict(), sort_keys=True) + "\n")
        logger.info("ingested %d documents", len(docs))

    def run_clean(self, d: Path):
        toks = corpus_mod.tokenize_corpus(self.documents(), self.cfg.cleaning())
        with open(d / "tokens.jsonl", "w", encoding="utf-8") as fh:
            for t in toks:
                fh.write(json.dumps({"doc_id": t.doc_id, "tokens": t.tokens}) + "\n")

    def run_matrices(self, d: Path):
        params = self.cfg.hierarchy()
        vocab, kept, X, S, C = hier.node_matrices(self.tokens(), params, self.doc_category())
        (d / "vocab.tsv").write_text("".join(f"{t}\t{vocab.df[t]}\n" for t in vocab.tokens))
        (d / "excluded.txt").write_text("".join(f"{x}\n" for x in vocab.excluded))
        (d / "documents.txt").write_text("".join(f"{t.doc_id}\n" for t in kept))
        write_triplets(X, d / "X.txt")
        if S is not None:
            write_triplets(S, d / "S.txt")
        if C is not None:
            write_triplets(C, d / "C.txt")
            cats = sorted({self.doc_category()[t.doc_id] for t in kept})
            (d / "categories.txt").write_text("".join(f"{c}\n" for c in cats))
        logger.info("root matrices: X %s, S %s, C %s", X.shape,
                    None if S is None else S.shape, None if C is None else C.shape)

    def run_hierarchy(self, d: Path):
        root_m = self.stage_dir("matrices")
        tree_dir = d / "tree"
        if tree_dir.exists():
            shutil.rmtree(tree_dir)
        root = hier.build_topic_tree(
            self.tokens(),
            self.cfg.hierarchy(),
            self.cfg.split(),
            self.doc_category(),
            checkpoint_dir=self.ckpt / "splits",
            root_matrices=_load_root_matrices(root_m, self.tokens()),
        )
        hier.save_tree(root, tree_dir)

    def run_annotations(self, d: Path):
        e = self.cfg.raw["entities"]
        docs = self.documents()
        ann: list[kg.EntityAnnotation] = []
        skipped = 0
        if e["annotations"]:
            ann, skipped = kg.ingest_annotations(self.cfg.path(e["annotations"]))
        if e["gazetteer"]:
            gaz = kg.load_gazetteer({k: self.cfg.path(v) for k, v in e["gazetteer"].items()})
            ann += kg.gazetteer_match(docs, gaz)
        uniq = {}
        for a in ann:
            uniq.setdefault((a.doc_id, a.label, a.normalized), a)
        ordered = [uniq[k] for k in sorted(uniq)]
        kg.write_annotations(ordered, d / "annotations.jsonl")
        logger.info("%d annotations (%d skipped labels)", len(ordered), skipped)

    def run_graph(self, d: Path):
        g_cfg = self.cfg.raw["graph"]
        tree = self.tree()
        try:
            node = tree.find(str(g_cfg["node"]))
        except KeyError:
            raise ConfigError(f"graph.node {g_cfg['node']!r} is not in the topic tree") from None
        ann, _ = kg.ingest_annotations(self.stage_dir("annotations") / "annotations.jsonl")
        g = kg.assemble_graph(self.documents(), node, ann)
        if g_cfg["community_edges"]:
            kg.add_community_edges(g, int(g_cfg["max_community_pairs"]))
        kg.write_jsonl(g, d / "graph.jsonl")

    def run_export(self, d: Path):
        export_all(self.graph(), self.tree(), self.doc_category(), self.cfg.raw["export"]["formats"], d)


def _load_root_matrices(d: Path, tokens):
    """Rebuild the root ``node_matrices`` tuple from the matrices checkpoint."""
    rows = [ln.split("\t") for ln in (d / "vocab.tsv").read_text().splitlines()]
    excluded = (d / "excluded.txt").read_text().split()
    vocab = corpus_mod.Vocabulary(
        tokens=[r[0] for r in rows], df={r[0]: int(r[1]) for r in rows},
        n_docs=len(tokens), excluded=excluded,
    )
    kept = corpus_mod.restrict(tokens, vocab, drop=excluded)
    X = read_triplets(d / "X.txt")
    S = read_triplets(d / "S.txt") if (d / "S.txt").exists() else None
    C = read_triplets(d / "C.txt") if (d / "C.txt").exists() else None
    return vocab, kept, X, S, C


def export_all(g: kg.KnowledgeGraph, tree: hier.TopicNode, doc_category, formats, export_dir: Path) -> list[Path]:
    export_dir.mkdir(parents=True, exist_ok=True)
    written = [kg.export_graph(g, fmt, export_dir / f"graph.{kg.EXTENSIONS[fmt]}") for fmt in formats]
    lines = ["node_id\ttopic\trank\ttoken\traw\tnormalized"]
    hist_lines = ["node_id\ttopic\tcategory\tcount"]
    for node in tree.walk():
        for t, kws in enumerate(node.keywords):
            for rank, (tok, raw, nrm) in enumerate(kws, 1):
                lines.append(f"{node.node_id}\t{t}\t{rank}\t{tok}\t{raw!r}\t{nrm!r}")
        for t, counts in hier.category_histograms(node, doc_category).items():
            for cat, n in sorted(counts.items(), key=lambda x: (-x[1], x[0])):
                hist_lines.append(f"{node.node_id}\t{t}\t{cat}\t{n}")
    for name, body in (("keywords.tsv", lines), ("category_histograms.tsv", hist_lines)):
        (export_dir / name).write_text("\n".join(body) + "\n")
        written.append(export_dir / name)
    stats = ["kind\tcount"] + [f"{k}\t{v}" for k, v in g.stats.items()]
    (export_dir / "stats.tsv").write_text("\n".join(stats) + "\n")
    written.append(export_dir / "stats.tsv")
    return written


def run_pipeline(cfg: PipelineConfig, from_stage: str | None = None) -> dict:
    """Execute every stage in order; returns the manifest as a dict.

    ``from_stage`` forces that stage and all later ones to recompute even
    when their checkpoints look current.
    """
    if from_stage is not None and from_stage not in STAGES:
        raise ConfigError(f"unknown stage {from_stage!r}; choose from {STAGES}")
    run = Run(cfg)
    run.ckpt.mkdir(parents=True, exist_ok=True)
    force_from = STAGES.index(from_stage) if from_stage else len(STAGES)
    for i, stage in enumerate(STAGES):
        digest = run.inputs_hash(stage)
        entry = run.manifest.entries.get(stage)
        if i < force_from and entry is not None:
            if entry["inputs_hash"] != digest and entry.get("status") != "failed":
                raise StaleCheckpointError(
                    f"checkpoint for stage '{stage}' was made with different inputs; "
                    f"rerun with --from {stage} to recompute it and later stages, "
                    f"or delete {run.out}"
                )
            if run.manifest.outputs_intact(stage, run.out):
                logger.info("stage %s: skipped (checkpoint)", stage)
                run.report.append((stage, "skipped (checkpoint)"))
                continue
        d = run.stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        t0 = time.perf_counter()
        try:
            getattr(run, f"run_{stage}")(d)
        except (ConfigError, StaleCheckpointError):
            raise
        except Exception as exc:
            run.manifest.entries[stage] = {"stage": stage, "inputs_hash": digest, "outputs": {},
                                           "status": "failed", "error": str(exc)}
            run.manifest.save()
            raise PipelineError(stage, exc) from exc
        outputs = {str(p.relative_to(run.out)): file_sha256(p) for p in _tree_files(d)}
        run.manifest.entries[stage] = {
            "stage": stage,
            "inputs_hash": digest,
            "outputs": outputs,
            "wall_time": round(time.perf_counter() - t0, 3),
            "seed": cfg.seed,
            "status": "completed",
        }
        run.manifest.save()
        run.report.append((stage, "completed"))
        logger.info("stage %s: completed", stage)
    return {"stages": [run.manifest.entries[s] for s in STAGES], "report": run.report}
