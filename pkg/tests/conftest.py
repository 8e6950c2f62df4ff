"""Shared fixtures: small hand-built corpora, vocabularies, and the
optional real-data directory used by the reference-value tests."""

import os
from pathlib import Path

import numpy as np
import pytest

from seglens.align import EmbeddingTable
from seglens.corpus import Corpus, EntityMention, RelationMention, Sentence
from seglens.wordpiece import make_vocab


def sent(sid, words, entities=(), relations=()):
    return Sentence(
        sid,
        tuple(words),
        tuple(EntityMention(*e) for e in entities),
        tuple(RelationMention(*r) for r in relations),
    )


@pytest.fixture
def tiny_corpus():
    """Three sentences with drug/effect entities and one relation each."""
    return Corpus((
        sent("s0", ["Patient", "took", "Naproxen", "and", "developed", "severe", "rash"],
             entities=[("Drug", 2, 3), ("AdverseEffect", 5, 7)],
             relations=[("AdverseEffectOf", 1, 0)]),
        sent("s1", ["aspirin", "caused", "stomach", "pain"],
             entities=[("Drug", 0, 1), ("AdverseEffect", 2, 4)],
             relations=[("AdverseEffectOf", 1, 0)]),
        sent("s2", ["no", "entities", "here"]),
    ))


@pytest.fixture
def toy_vocab():
    """Covers the tiny corpus words so tokenization is identity except 'Naproxen'."""
    return make_vocab([
        "[UNK]", "Patient", "took", "Na", "##pro", "##xen", "and", "developed",
        "severe", "rash", "aspirin", "caused", "stomach", "pain", "no",
        "entities", "here",
    ])


def random_word_table(corpus, dim=8, seed=0, level="word"):
    rng = np.random.default_rng(seed)
    vectors = {}
    for s in corpus.sentences:
        vectors[s.id] = rng.standard_normal((len(s.words), dim)).astype(np.float32)
    return EmbeddingTable(level, vectors)


def data_dir() -> Path:
    """Directory holding the real corpus and vocabulary files, if provided."""
    return Path(os.environ.get("SEGLENS_DATA", Path(__file__).resolve().parent.parent / "data"))


def require_data(*names):
    """Skip unless every named real-data file is available."""
    base = data_dir()
    missing = [n for n in names if not (base / n).exists()]
    if missing:
        pytest.skip(
            f"real-data files not available: {', '.join(missing)} "
            f"(place them under {base} or set SEGLENS_DATA; see README)"
        )
    return base
