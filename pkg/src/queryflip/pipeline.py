"""Build, persist, and load the full model stack; wire up eval contexts.

The stack bundles everything derived from one corpus: the corpus store,
vocabulary, inverted index, BM25 model, embedding table, and n-gram LM.
Each persisted artifact embeds the build fingerprint of the config and
corpus that produced it; loading with a different config is an error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, build_fingerprint
from .corpus import (
    Bm25Params,
    Bm25SearchModel,
    Corpus,
    Document,
    InvertedIndex,
    build_index,
    ingest_corpus,
)
from .embed import EmbeddingTable, train_embeddings
from .evaluation import EvalContext
from .lm import NgramLM, NgramPredictor, perplexity, train_ngram
from .remote import (
    BackendEndpoint,
    RemoteEmbedder,
    RemotePerplexity,
    RemotePredictor,
    RemoteScorer,
)
from .text import Vocabulary, build_vocabulary, tokenize

logger = logging.getLogger(__name__)

_FORMAT_VERSION = 1

CORPUS_FILE = "corpus.json"
INDEX_FILE = "index.json"
EMBED_FILE = "embeddings.npz"
LM_FILE = "lm.json"

ARTIFACT_FILES = (CORPUS_FILE, INDEX_FILE, EMBED_FILE, LM_FILE)


class ArtifactError(RuntimeError):
    pass


@dataclass
class Stack:
    corpus: Corpus
    vocab: Vocabulary
    index: InvertedIndex
    search: Bm25SearchModel
    table: EmbeddingTable
    lm: NgramLM
    fingerprint: str


def corpus_digest(corpus: Corpus) -> str:
    hasher = hashlib.sha256()
    for doc_id in corpus.doc_ids():
        doc = corpus[doc_id]
        hasher.update(doc.id.encode("utf-8"))
        hasher.update(b"\x00")
        hasher.update(doc.text.encode("utf-8"))
        hasher.update(b"\x01")
    return hasher.hexdigest()[:16]


def build_stack(corpus: Corpus, config: RunConfig) -> Stack:
    """Derive every model artifact from an ingested corpus.

    The embedding dimension is clamped to what the vocabulary and the
    co-occurrence rank can support, so small corpora still index cleanly.
    """
    config.validate()
    vocab = build_vocabulary(
        (doc.tokens for doc in corpus.documents()), config.min_count
    )
    index = build_index(corpus, vocab)
    search = Bm25SearchModel(
        corpus, vocab, index, Bm25Params(config.k1, config.b_bm25)
    )
    dim = min(config.embed_dim, max(2, vocab.content_size))
    table = train_embeddings(
        corpus,
        vocab,
        dim=dim,
        window=config.embed_window,
        seed=config.seed,
        clamp_to_rank=True,
    )
    lm = train_ngram(corpus, vocab, order=config.lm_order, k=config.lm_k)
    fingerprint = build_fingerprint(config.build_params(), corpus_digest(corpus))
    return Stack(corpus, vocab, index, search, table, lm, fingerprint)


def build_stack_from_file(path: str, config: RunConfig) -> Stack:
    with open(path, encoding="utf-8") as fh:
        return build_stack(ingest_corpus(fh), config)


# ---------------------------------------------------------------------------
# Persistence


def save_stack(stack: Stack, config: RunConfig) -> None:
    out = config.artifacts
    os.makedirs(out, exist_ok=True)
    head = {
        "format_version": _FORMAT_VERSION,
        "fingerprint": stack.fingerprint,
        "build_params": config.build_params(),
    }

    docs = [
        {"id": doc.id, "text": doc.text}
        for doc in stack.corpus.documents()
    ]
    _write_json(os.path.join(out, CORPUS_FILE), {**head, "docs": docs})

    postings = {
        str(term_id): sorted(by_doc.items())
        for term_id, by_doc in stack.index.postings.items()
    }
    _write_json(
        os.path.join(out, INDEX_FILE),
        {**head, "postings": postings, "doc_len": stack.index.doc_len},
    )

    counts = [
        [list(context), sorted(counter.items())]
        for context, counter in sorted(stack.lm._counts.items())
    ]
    _write_json(
        os.path.join(out, LM_FILE),
        {
            **head,
            "order": stack.lm.order,
            "k": stack.lm.k,
            "n_candidates": stack.lm.n_candidates,
            "counts": counts,
        },
    )

    np.savez(
        os.path.join(out, EMBED_FILE),
        vectors=stack.table.vectors,
        dim=np.array([stack.table.dim]),
        provenance=np.array([stack.table.provenance]),
        fingerprint=np.array([stack.fingerprint]),
    )
    logger.info("saved artifacts to %s (fingerprint %s)", out, stack.fingerprint)


def load_stack(config: RunConfig) -> Stack:
    """Load artifacts, verifying fingerprints against the current config."""
    art = config.artifacts
    for name in ARTIFACT_FILES:
        if not os.path.exists(os.path.join(art, name)):
            raise ArtifactError(
                f"missing artifact {name} in {art}; run `queryflip index` first"
            )

    corpus_doc = _read_json(os.path.join(art, CORPUS_FILE))
    index_doc = _read_json(os.path.join(art, INDEX_FILE))
    lm_doc = _read_json(os.path.join(art, LM_FILE))
    with np.load(os.path.join(art, EMBED_FILE), allow_pickle=False) as npz:
        vectors = npz["vectors"]
        dim = int(npz["dim"][0])
        provenance = str(npz["provenance"][0])
        embed_fingerprint = str(npz["fingerprint"][0])

    documents = [
        Document(rec["id"], rec["text"], tuple(tokenize(rec["text"])))
        for rec in corpus_doc["docs"]
    ]
    corpus = Corpus(documents)
    expected = build_fingerprint(config.build_params(), corpus_digest(corpus))
    stored = {
        CORPUS_FILE: corpus_doc["fingerprint"],
        INDEX_FILE: index_doc["fingerprint"],
        LM_FILE: lm_doc["fingerprint"],
        EMBED_FILE: embed_fingerprint,
    }
    for name, fingerprint in stored.items():
        if fingerprint != expected:
            raise ArtifactError(
                f"artifact {name} fingerprint {fingerprint} does not match "
                f"current config ({expected}); re-run `queryflip index`"
            )

    vocab = build_vocabulary(
        (doc.tokens for doc in corpus.documents()), config.min_count
    )
    index = InvertedIndex(
        {int(t): dict((d, tf) for d, tf in posting) for t, posting in
         index_doc["postings"].items()},
        index_doc["doc_len"],
    )
    search = Bm25SearchModel(
        corpus, vocab, index, Bm25Params(config.k1, config.b_bm25)
    )
    table = EmbeddingTable(dim, vectors, provenance)
    lm = NgramLM(lm_doc["order"], lm_doc["k"], lm_doc["n_candidates"])
    lm._counts = {
        tuple(context): Counter({t: c for t, c in pairs})
        for context, pairs in lm_doc["counts"]
    }
    lm._totals = {ctx: sum(counter.values()) for ctx, counter in lm._counts.items()}
    return Stack(corpus, vocab, index, search, table, lm, expected)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Context assembly


def make_context(stack: Stack, config: RunConfig) -> EvalContext:
    """Bundle the stack (plus any configured remote backends) for eval."""
    config.validate()
    endpoints = {
        role: BackendEndpoint.from_dict(role, raw)
        for role, raw in config.backends.items()
    }

    scorer = stack.search
    if "score" in endpoints:
        scorer = RemoteScorer(endpoints["score"], stack.vocab)

    embedder = stack.table
    if "embed" in endpoints:
        embedder = RemoteEmbedder(endpoints["embed"], stack.vocab)

    if "perplexity" in endpoints:
        ppl_fn = RemotePerplexity(endpoints["perplexity"], stack.vocab)
    else:
        lm = stack.lm
        ppl_fn = lambda ids: perplexity(ids, lm)  # noqa: E731

    if "predict" in endpoints:
        predict_endpoint = endpoints["predict"]

        def predictor_factory(doc: Document):
            return RemotePredictor(predict_endpoint, stack.vocab, doc.text)

    else:

        def predictor_factory(doc: Document):
            return NgramPredictor(
                stack.lm, stack.vocab.encode(doc.tokens), config.lam
            )

    return EvalContext(
        vocab=stack.vocab,
        search=stack.search,
        scorer=scorer,
        embedder=embedder,
        ppl_fn=ppl_fn,
        predictor_factory=predictor_factory,
        masker=config.masker,
    )
