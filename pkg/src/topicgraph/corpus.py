"""Corpus loading, text cleaning and vocabulary construction."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

DEFAULT_FIELDS = {
    "id": "id",
    "title": "title",
    "abstract": "abstract",
    "authors": "authors",
    "categories": "categories",
    "year": "year",
    "doi": "doi",
}

ENGLISH_STOPWORDS = frozenset("""
a about above after again against all almost also although always am among an and another any
anyone are around as at be became because been before being below between both but by can
cannot could did do does doing done down during each either else enough etc even ever every
few for from further had has have having he her here hers herself him himself his how however
i if in into is it its itself just least less many may me might more most much must my myself
neither no nor not now of off often on once one only or other others otherwise our ours
ourselves out over own per perhaps rather same several she should since so some such than that
the their theirs them themselves then there therefore these they this those though through thus
to too toward towards under until up upon us very via was we well were what whatever when where
whereas whether which while who whom whose why will with within without would yet you your
yours yourself yourselves
""".split())

# scientific boilerplate on top of the usual English list
SCIENTIFIC_STOPWORDS = frozenset(
    "doi preprint copyright figure fig table demonstrate paper propose "
    "proposed result results show shown use used using".split()
)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus input."""


@dataclass
class DocumentRecord:
    doc_id: str
    title: str = ""
    body: str = ""
    authors: list[str] = field(default_factory=list)
    primary_category: str | None = None
    categories: list[str] = field(default_factory=list)
    year: int | None = None
    doi: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.doc_id:
            raise CorpusError("doc_id must be non-empty")
        if self.primary_category is not None and self.primary_category not in self.categories:
            self.categories = [self.primary_category] + list(self.categories)

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}" if self.title else self.body

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "body": self.body,
            "authors": list(self.authors),
            "primary_category": self.primary_category,
            "categories": list(self.categories),
            "year": self.year,
            "doi": self.doi,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DocumentRecord":
        return cls(**d)


@dataclass
class CleaningConfig:
    stopwords: frozenset = frozenset()
    stop_phrases: tuple = ()
    min_tokens: int = 0
    join_hyphens: bool = True
    lowercase: bool = True
    strip_non_ascii: bool = True
    lemma_map: dict[str, str] | None = None

    def __post_init__(self):
        if self.min_tokens < 0:
            raise ValueError("min_tokens must be >= 0")
        sw = frozenset(self.stopwords)
        self.stopwords = frozenset(w.lower() for w in sw) if self.lowercase else sw
        self.stop_phrases = tuple(self.stop_phrases)


@dataclass
class TokenizedDocument:
    doc_id: str
    tokens: list[str]


@dataclass
class Vocabulary:
    """Ordered token list with document frequencies.

    ``excluded`` lists documents left with fewer than ``min_tokens``
    in-vocabulary tokens; callers drop them before building matrices.
    """

    tokens: list[str]
    df: dict[str, int]
    n_docs: int = 0
    excluded: list[str] = field(default_factory=list)
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _as_list(value, sep: str) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [p.strip() for p in re.split(sep, value) if p.strip()]
    return [str(v).strip() for v in value if str(v).strip()]


def load_corpus(path, field_mapping: Mapping[str, str] | None = None) -> list[DocumentRecord]:
    """Read a JSON-lines corpus.

    ``field_mapping`` maps logical names (id, title, abstract, authors,
    categories, year, doi) to keys in the file. The first listed category
    is the primary one. Unmapped keys are kept in ``extra``.
    """
    fields = dict(DEFAULT_FIELDS)
    if field_mapping:
        unknown = set(field_mapping) - set(DEFAULT_FIELDS)
        if unknown:
            raise CorpusError(f"unknown corpus fields in mapping: {sorted(unknown)}")
        fields.update(field_mapping)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    records: list[DocumentRecord] = []
    seen: dict[str, int] = {}
    mapped = set(fields.values())
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed record ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise CorpusError(f"{path}:{lineno}: record is not an object")
        doc_id = raw.get(fields["id"])
        body = raw.get(fields["abstract"])
        if doc_id in (None, "") or body is None:
            raise CorpusError(f"{path}:{lineno}: record missing id or abstract")
        doc_id = str(doc_id)
        if doc_id in seen:
            raise CorpusError(
                f"{path}: duplicate doc_id {doc_id!r} on lines {seen[doc_id]} and {lineno}"
            )
        seen[doc_id] = lineno
        # arXiv metadata ships space-separated categories and comma-separated authors
        cats = _as_list(raw.get(fields["categories"]), r"\s+")
        year = raw.get(fields["year"])
        try:
            year = int(year) if year not in (None, "") else None
        except (TypeError, ValueError):
            raise CorpusError(f"{path}:{lineno}: bad year {year!r}") from None
        doi = raw.get(fields["doi"])
        records.append(
            DocumentRecord(
                doc_id=doc_id,
                title=str(raw.get(fields["title"]) or ""),
                body=str(body),
                authors=_as_list(raw.get(fields["authors"]), r",|\band\b"),
                primary_category=cats[0] if cats else None,
                categories=cats,
                year=year,
                doi=str(doi) if doi else None,
                extra={k: v for k, v in raw.items() if k not in mapped},
            )
        )
    return records


def load_stopwords(path) -> frozenset:
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        w = line.strip()
        if w and not w.startswith("#"):
            words.add(w)
    return frozenset(words)


def load_lemma_map(path) -> dict[str, str]:
    """Two whitespace-separated columns per line: surface form, lemma."""
    lemmas = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 'surface lemma'")
        lemmas[parts[0].lower()] = parts[1].lower()
    return lemmas


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------

_ALNUM = "A-Za-z0-9"
_EMAIL = re.compile(r"\S+@\S+\.\w+")
_HTML_TAG = re.compile(r"<[^<>]*>")
_LATEX_CMD = re.compile(r"\\[A-Za-z]+\*?")
_NON_ASCII = re.compile(r"[^\x00-\x7f]")
_SYMBOL = re.compile(rf"[^{_ALNUM}\-\s]")
_HYPHEN_JOIN = re.compile(rf"(?<=[{_ALNUM}])-+(?=[{_ALNUM}])")


def _phrase_words(phrase: str) -> list[str]:
    return re.findall(rf"[{_ALNUM}]+", phrase.lower())


def _phrase_regex(words: Sequence[str]) -> re.Pattern:
    sep = rf"[^{_ALNUM}]+"
    body = sep.join(re.escape(w) for w in words)
    return re.compile(rf"(?<![{_ALNUM}]){body}(?![{_ALNUM}])", re.IGNORECASE)


def _drop_phrase_runs(tokens: list[str], phrases: list[list[str]]) -> list[str]:
    # repeat until no phrase survives; a removal can splice a new occurrence together
    changed = True
    while changed and tokens:
        changed = False
        for words in phrases:
            n = len(words)
            out, i = [], 0
            while i < len(tokens):
                if [t.lower() for t in tokens[i:i + n]] == words:
                    i += n
                    changed = True
                else:
                    out.append(tokens[i])
                    i += 1
            tokens = out
    return tokens


def clean_text(raw: str, cfg: CleaningConfig) -> list[str]:
    """Turn raw text into an ordered token list.

    Steps run in a fixed order: stop phrases, markup/e-mail/non-ASCII/symbol
    stripping, lowercasing, hyphen joining, whitespace split, lemma lookup,
    then stopword and single-character removal. Stop phrases are matched
    word-wise (any run of non-alphanumerics separates words) so that
    re-cleaning the joined output is a no-op whenever ``lemma_map`` is
    idempotent.
    """
    if not raw:
        return []
    phrases = [w for w in (_phrase_words(p) for p in cfg.stop_phrases) if w]
    text = raw
    for words in phrases:
        text = _phrase_regex(words).sub(" ", text)
    text = _EMAIL.sub(" ", text)
    text = _HTML_TAG.sub(" ", text)
    text = _LATEX_CMD.sub(" ", text)
    if cfg.strip_non_ascii:
        text = _NON_ASCII.sub("", text)
    text = _SYMBOL.sub(" ", text)
    if cfg.lowercase:
        text = text.lower()
    if cfg.join_hyphens:
        text = _HYPHEN_JOIN.sub("", text)
    text = text.replace("-", " ")
    tokens = text.split()
    if cfg.lemma_map:
        tokens = [cfg.lemma_map.get(t, t) for t in tokens]
    tokens = [t for t in tokens if len(t) > 1 and t not in cfg.stopwords]
    if phrases:
        tokens = _drop_phrase_runs(tokens, phrases)
    return tokens


def tokenize_corpus(docs: Iterable[DocumentRecord], cfg: CleaningConfig) -> list[TokenizedDocument]:
    return [TokenizedDocument(d.doc_id, clean_text(d.text, cfg)) for d in docs]


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def document_frequencies(docs: Iterable[TokenizedDocument]) -> Counter:
    df: Counter = Counter()
    for d in docs:
        df.update(set(d.tokens))
    return df


def build_vocabulary(
    docs: Sequence[TokenizedDocument],
    min_df: int = 2,
    max_df_fraction: float = 0.8,
    min_tokens: int = 0,
) -> Vocabulary:
    """Keep tokens with ``min_df <= df <= max_df_fraction * N``.

    Tokens are ordered lexicographically. Documents keeping fewer than
    ``min_tokens`` vocabulary tokens are reported in ``Vocabulary.excluded``.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    if not 0 < max_df_fraction <= 1:
        raise ValueError("max_df_fraction must be in (0, 1]")
    if not docs:
        raise CorpusError("cannot build a vocabulary from zero documents")
    n = len(docs)
    df = document_frequencies(docs)
    max_df = max_df_fraction * n
    kept = sorted(t for t, c in df.items() if min_df <= c <= max_df)
    if not kept:
        too_rare = sum(1 for c in df.values() if c < min_df)
        too_common = sum(1 for c in df.values() if c > max_df)
        raise CorpusError(
            f"empty vocabulary: {len(df)} candidate tokens over {n} documents, "
            f"{too_rare} below min_df={min_df}, {too_common} above "
            f"max_df_fraction={max_df_fraction} (df > {max_df:g})"
        )
    keep = set(kept)
    excluded = [
        d.doc_id for d in docs if sum(1 for t in d.tokens if t in keep) < min_tokens
    ]
    if excluded:
        logger.info("%d of %d documents fall below %d tokens", len(excluded), n, min_tokens)
    return Vocabulary(
        tokens=kept, df={t: df[t] for t in kept}, n_docs=n, excluded=excluded
    )


def restrict(docs: Iterable[TokenizedDocument], vocab: Vocabulary, drop: Iterable[str] = ()):
    """Filter tokens to ``vocab`` and omit documents listed in ``drop``."""
    drop = set(drop)
    return [
        TokenizedDocument(d.doc_id, [t for t in d.tokens if t in vocab.index])
        for d in docs
        if d.doc_id not in drop
    ]
