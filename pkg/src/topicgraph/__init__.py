"""Topic trees and knowledge graphs from document corpora via NMF with
automatic rank selection."""

from .corpus import CleaningConfig, DocumentRecord, TokenizedDocument, Vocabulary, build_vocabulary, clean_text, load_corpus
from .hierarchy import HierarchyParams, TopicNode, build_topic_tree
from .kg import KnowledgeGraph, assemble_graph, export_graph
from .matrices import CooccurrenceConfig, build_category_matrix, build_cooccurrence, build_tfidf, sppmi
from .nmf import FactorPair, NmfParams, nmf
from .nmfk import ModelSelection, NmfkParams, select_k
from .pipeline import PipelineConfig, run_pipeline
from .split import SplitParams, run_split

__version__ = "0.1.0"

__all__ = [
    "CleaningConfig", "DocumentRecord", "TokenizedDocument", "Vocabulary", "build_vocabulary", "clean_text",
    "load_corpus", "HierarchyParams", "TopicNode", "build_topic_tree", "KnowledgeGraph", "assemble_graph",
    "export_graph", "CooccurrenceConfig", "build_category_matrix", "build_cooccurrence", "build_tfidf", "sppmi",
    "FactorPair", "NmfParams", "nmf", "ModelSelection", "NmfkParams", "select_k", "PipelineConfig",
    "run_pipeline", "SplitParams", "run_split",
]
