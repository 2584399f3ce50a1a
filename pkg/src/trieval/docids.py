"""Document identifier construction: keyword, product-quantization, atomic.

Every builder first produces docids as token *strings*; `make_unique`
resolves collisions, then a `DocidVocabulary` maps strings to dense ids.
The reserved end-of-docid sentinel is not a stored token: its id is
always one past the last real token, so `len(vocab)` counts real tokens
while scorers operate over ``len(vocab) + 1`` logits.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from trieval.corpus import Corpus, Document, tokenize
from trieval.errors import DocidError
from trieval.trie import SENTINEL_TOKEN

log = logging.getLogger(__name__)

DOCID_KINDS = ("keyword", "pq", "atomic")


@dataclass(frozen=True)
class DocidSequence:
    """A document identifier as vocabulary token ids."""

    tokens: tuple[int, ...]
    doc_key: str

    def __post_init__(self) -> None:
        if not self.tokens:
            raise DocidError(f"empty docid for document {self.doc_key!r}")


class DocidVocabulary:
    """Bijection between docid token strings and dense ids.

    Holds real tokens only; the sentinel is addressed as ``sentinel_id``
    (== number of real tokens) and round-trips through the accessors.
    """

    def __init__(self, kind: str, tokens: Sequence[str]):
        if kind not in DOCID_KINDS:
            raise ValueError(f"unknown docid kind {kind!r}")
        self.kind = kind
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise DocidError("duplicate token string in vocabulary")
        if SENTINEL_TOKEN in self._ids:
            raise DocidError(f"reserved token {SENTINEL_TOKEN!r} used as a docid token")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sentinel_id(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        if token == SENTINEL_TOKEN:
            return self.sentinel_id
        try:
            return self._ids[token]
        except KeyError:
            raise DocidError(f"token {token!r} not in docid vocabulary") from None

    def token_of(self, token_id: int) -> str:
        if token_id == self.sentinel_id:
            return SENTINEL_TOKEN
        try:
            return self.tokens[token_id]
        except IndexError:
            raise DocidError(f"token id {token_id} out of range") from None

    def encode(self, tokens: Iterable[str], doc_key: str) -> DocidSequence:
        return DocidSequence(tuple(self.id_of(t) for t in tokens), doc_key)

    def decode(self, docid: DocidSequence) -> list[str]:
        return [self.token_of(t) for t in docid.tokens]

    def save(self, path: str | Path) -> None:
        payload = {"kind": self.kind, "tokens": list(self.tokens)}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DocidVocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload["kind"], payload["tokens"])


@dataclass(frozen=True)
class KeywordDocidConfig:
    title_length_threshold: int = 2

    def __post_init__(self) -> None:
        if self.title_length_threshold < 0:
            raise ValueError("title_length_threshold must be >= 0")


def _url_segments(url: str) -> list[str]:
    for scheme in ("https://", "http://"):
        if url.startswith(scheme):
            url = url[len(scheme) :]
            break
    url = url.split("#", 1)[0].split("?", 1)[0]
    return [seg for seg in url.split("/") if seg]


def build_keyword_docid(doc: Document, config: KeywordDocidConfig) -> list[str]:
    """Keyword docid: reversed URL segments, or title + domain for long titles.

    A title of at most L tokens means the URL carries the semantics, so
    the docid is the URL's '/'-separated parts in reverse (content first,
    domain last). Longer titles produce title tokens followed by the
    domain tokens.
    """
    if not doc.url and not doc.title:
        raise DocidError(f"document {doc.doc_key!r} has neither url nor title")
    title_tokens = tokenize(doc.title)
    segments = _url_segments(doc.url)
    if len(title_tokens) <= config.title_length_threshold:
        tokens = [t for seg in reversed(segments) for t in tokenize(seg)]
    else:
        domain = segments[0] if segments else ""
        tokens = title_tokens + tokenize(domain)
    if not tokens:
        raise DocidError(
            f"keyword docid for document {doc.doc_key!r} is empty "
            "(short title and no usable url)"
        )
    return tokens


# --- embeddings -------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-document real vectors, row-aligned with corpus order."""

    vectors: np.ndarray  # shape (n_docs, dim)

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _term_direction(term: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "big")]))
    return rng.standard_normal(dim)


def embed_documents(corpus: Corpus, dim: int, seed: int) -> EmbeddingMatrix:
    """tf-idf document vectors projected to `dim` by a seeded Gaussian map.

    Each corpus term gets a fixed random direction derived from (seed,
    term), so the result depends only on document content, dim, and seed.
    Rows are L2-normalized. The idf here is ln(N/df) + 1 so that no
    non-empty document maps to the zero vector.
    """
    if dim < 2:
        raise ValueError(f"embedding dim must be >= 2, got {dim}")
    n = corpus.stats.doc_count
    directions: dict[str, np.ndarray] = {}
    rows = np.zeros((len(corpus), dim))
    for i, doc in enumerate(corpus.documents):
        vec = np.zeros(dim)
        counts: dict[str, int] = {}
        for tok in tokenize(doc.body):
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            direction = directions.get(term)
            if direction is None:
                direction = directions[term] = _term_direction(term, seed, dim)
            df = corpus.stats.doc_frequency[term]
            vec += tf * (np.log(n / df) + 1.0) * direction
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise DocidError(f"degenerate embedding for document {doc.doc_key!r}")
        rows[i] = vec / norm
    return EmbeddingMatrix(rows)


def load_embeddings(path: str | Path, corpus: Corpus) -> EmbeddingMatrix:
    """Read JSONL {doc_key, vector} records and align them to corpus order."""
    path = Path(path)
    by_key: dict[str, list[float]] = {}
    dim: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            vector = record["vector"]
            if dim is None:
                dim = len(vector)
            elif len(vector) != dim:
                raise DocidError(
                    f"{path}:{lineno}: vector length {len(vector)} != expected {dim}"
                )
            by_key[str(record["doc_key"])] = vector
    rows = []
    for doc in corpus.documents:
        if doc.doc_key not in by_key:
            raise DocidError(f"embedding file {path} missing doc_key {doc.doc_key!r}")
        rows.append(by_key[doc.doc_key])
    return EmbeddingMatrix(np.asarray(rows, dtype=float))


def dump_embeddings(path: str | Path, corpus: Corpus, emb: EmbeddingMatrix) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc, row in zip(corpus.documents, emb.vectors):
            fh.write(json.dumps({"doc_key": doc.doc_key, "vector": row.tolist()}))
            fh.write("\n")


# --- product quantization ---------------------------------------------------


@dataclass(frozen=True)
class PQCodebook:
    """Per-group k-means centroids quantizing D-dimensional embeddings.

    `wcss_trace[g]` records the within-cluster sum of squares after each
    Lloyd assignment step of group g; it is non-increasing by construction.
    """

    m: int
    k: int
    group_dim: int
    centroids: np.ndarray  # shape (m, k, group_dim)
    seed: int
    wcss_trace: tuple[tuple[float, ...], ...] = field(default=(), compare=False)

    def token_string(self, group: int, cluster: int) -> str:
        return f"pq_{group}_{cluster}"

    def all_token_strings(self) -> list[str]:
        # token id == group * k + cluster once the vocabulary is built
        return [self.token_string(g, c) for g in range(self.m) for c in range(self.k)]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    dist2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            # all remaining mass on existing centers; duplicate any point
            centers[j] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=dist2 / total)
        centers[j] = points[idx]
        dist2 = np.minimum(dist2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iters: int):
    centers = _kmeans_pp_init(points, k, rng)
    trace: list[float] = []
    assign = None
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)  # argmin takes the lowest cluster id on ties
        trace.append(float(d2[np.arange(len(points)), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        # reseed empty clusters to the point currently farthest from its center
        empties = [j for j in range(k) if not (assign == j).any()]
        if empties:
            gaps = ((points - centers[assign]) ** 2).sum(axis=1)
            for j in empties:
                far = int(gaps.argmax())
                centers[j] = points[far]
                assign[far] = j
                gaps[far] = 0.0
    return centers, tuple(trace)


def train_codebook(
    emb: EmbeddingMatrix, m: int, k: int, seed: int, max_iters: int = 25
) -> PQCodebook:
    """k-means++ / Lloyd codebook over m independent coordinate groups."""
    n, dim = emb.vectors.shape
    if m < 1 or dim % m != 0:
        raise ValueError(f"dim {dim} not divisible by m={m}")
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be in [1, {n}] (document count)")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    group_dim = dim // m
    centroids = np.empty((m, k, group_dim))
    traces = []
    for g in range(m):
        rng = np.random.default_rng(np.random.SeedSequence([seed, g]))
        block = emb.vectors[:, g * group_dim : (g + 1) * group_dim]
        centroids[g], trace = _lloyd(block, k, rng, max_iters)
        traces.append(trace)
    return PQCodebook(
        m=m, k=k, group_dim=group_dim, centroids=centroids, seed=seed,
        wcss_trace=tuple(traces),
    )


def encode_pq(vector: np.ndarray, codebook: PQCodebook) -> list[str]:
    """Quantize one vector to its m nearest-centroid token strings."""
    vector = np.asarray(vector, dtype=float)
    expected = codebook.m * codebook.group_dim
    if vector.shape != (expected,):
        raise ValueError(f"vector length {vector.shape} != {expected}")
    tokens = []
    for g in range(codebook.m):
        sub = vector[g * codebook.group_dim : (g + 1) * codebook.group_dim]
        d2 = ((codebook.centroids[g] - sub) ** 2).sum(axis=1)
        tokens.append(codebook.token_string(g, int(d2.argmin())))
    return tokens


# --- atomic -----------------------------------------------------------------


def atomic_token_strings(corpus: Corpus) -> list[list[str]]:
    """One single-token docid per document, assigned in corpus order."""
    return [[f"doc{i}"] for i in range(len(corpus))]


def assign_atomic(corpus: Corpus) -> tuple[DocidVocabulary, list[DocidSequence]]:
    strings = atomic_token_strings(corpus)
    vocab = DocidVocabulary("atomic", [s[0] for s in strings])
    docids = [
        vocab.encode(toks, doc.doc_key)
        for toks, doc in zip(strings, corpus.documents)
    ]
    return vocab, docids


# --- uniqueness and assembly ------------------------------------------------


def make_unique(docids: list[list[str]]) -> list[list[str]]:
    """Disambiguate colliding docids by appending '#2', '#3', ... in order.

    The first occurrence keeps its tokens. A suffix is bumped past any
    sequence already present in the input or produced so far, so the
    output is collision-free even when an input happens to look like a
    disambiguated form.
    """
    originals = {tuple(d) for d in docids}
    taken: set[tuple[str, ...]] = set()
    out: list[list[str]] = []
    for docid in docids:
        candidate = tuple(docid)
        if candidate in taken:
            n = 2
            while True:
                candidate = tuple(docid) + (f"#{n}",)
                if candidate not in taken and candidate not in originals:
                    break
                n += 1
        taken.add(candidate)
        out.append(list(candidate))
    return out


@dataclass(frozen=True)
class DocidIndex:
    """Vocabulary plus per-document docids, aligned with corpus order."""

    vocab: DocidVocabulary
    docids: tuple[DocidSequence, ...]
    codebook: PQCodebook | None = None

    def __post_init__(self) -> None:
        distinct = {d.tokens for d in self.docids}
        if len(distinct) != len(self.docids):
            raise DocidError("docid collision after uniqueness pass")

    def by_key(self) -> dict[str, DocidSequence]:
        return {d.doc_key: d for d in self.docids}


def _vocab_from_strings(
    kind: str, string_docids: list[list[str]], base_tokens: Sequence[str] = ()
) -> DocidVocabulary:
    tokens = list(base_tokens)
    known = set(tokens)
    for docid in string_docids:
        for tok in docid:
            if tok not in known:
                known.add(tok)
                tokens.append(tok)
    return DocidVocabulary(kind, tokens)


def build_docids(
    corpus: Corpus,
    kind: str,
    *,
    keyword_config: KeywordDocidConfig | None = None,
    embeddings: EmbeddingMatrix | None = None,
    m: int = 24,
    k: int = 256,
    embed_dim: int = 768,
    seed: int = 0,
    kmeans_iters: int = 25,
) -> DocidIndex:
    """Build the full docid index for one corpus and one docid kind.

    For kind "pq", embeddings are computed here (tf-idf projection) when
    not supplied. Raises DocidError when any document cannot be encoded.
    """
    if kind == "atomic":
        vocab, docids = assign_atomic(corpus)
        return DocidIndex(vocab=vocab, docids=tuple(docids))
    if kind == "keyword":
        config = keyword_config or KeywordDocidConfig()
        strings = [build_keyword_docid(doc, config) for doc in corpus.documents]
        strings = make_unique(strings)
        vocab = _vocab_from_strings("keyword", strings)
        codebook = None
    elif kind == "pq":
        if embeddings is None:
            embeddings = embed_documents(corpus, embed_dim, seed)
        codebook = train_codebook(embeddings, m, k, seed, kmeans_iters)
        strings = [encode_pq(row, codebook) for row in embeddings.vectors]
        strings = make_unique(strings)
        vocab = _vocab_from_strings("pq", strings, base_tokens=codebook.all_token_strings())
    else:
        raise ValueError(f"unknown docid kind {kind!r}")
    docids = tuple(
        vocab.encode(toks, doc.doc_key) for toks, doc in zip(strings, corpus.documents)
    )
    return DocidIndex(vocab=vocab, docids=docids, codebook=codebook)


def dump_docids(path: str | Path, index: DocidIndex) -> None:
    """TSV dump: doc_key, tab, space-joined docid token strings."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for docid in index.docids:
            fh.write(f"{docid.doc_key}\t{' '.join(index.vocab.decode(docid))}\n")


def load_docids(path: str | Path, vocab: DocidVocabulary) -> tuple[DocidSequence, ...]:
    docids = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            doc_key, tokens = line.split("\t")
            docids.append(vocab.encode(tokens.split(" "), doc_key))
    return tuple(docids)
