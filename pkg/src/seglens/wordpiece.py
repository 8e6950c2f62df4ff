"""WordPiece subword tokenization over pre-split words.

Implements greedy longest-match-first inference against a fixed vocabulary
(the published one-subword-per-line file format, read bit-exact), plus
ingestion of tokenizations produced by external tools for vocabularies this
package does not model (e.g. unigram-LM SentencePiece).

The corpus arrives pre-split into atomic word tokens, so no punctuation
splitting or other basic-tokenizer passes happen here: a tokenizer maps one
word to one or more pieces, non-initial pieces carrying the continuation
prefix.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass

from .corpus import Corpus
from .errors import VocabError


@dataclass(frozen=True)
class Vocab:
    """An ordered subword vocabulary with continuation-prefix convention."""

    entries: tuple[str, ...]
    index: dict
    unk_token: str = "[UNK]"
    continuation_prefix: str = "##"
    max_chars_per_word: int = 100

    def __len__(self):
        return len(self.entries)

    def __contains__(self, piece: str) -> bool:
        return piece in self.index


def make_vocab(entries, unk_token="[UNK]", continuation_prefix="##",
               max_chars_per_word=100) -> Vocab:
    entries = tuple(entries)
    seen = set()
    for e in entries:
        if e in seen:
            raise VocabError(f"duplicate vocabulary entry {e!r}")
        seen.add(e)
    if unk_token not in seen:
        raise VocabError(f"vocabulary is missing the unknown token {unk_token!r}")
    index = {e: i for i, e in enumerate(entries)}
    return Vocab(entries, index, unk_token, continuation_prefix, max_chars_per_word)


def load_vocab(path, unk_token="[UNK]", continuation_prefix="##",
               max_chars_per_word=100) -> Vocab:
    """Read a one-subword-per-line vocabulary file; rank = line number."""
    try:
        with open(path, encoding="utf-8") as fh:
            entries = [line.rstrip("\n") for line in fh]
    except OSError as exc:
        raise VocabError(f"cannot read vocabulary file {path}: {exc}") from exc
    return make_vocab(entries, unk_token, continuation_prefix, max_chars_per_word)


def normalize_word(word: str, mode: str) -> str:
    """Identity for cased mode; lowercase plus accent stripping for uncased."""
    if mode == "cased":
        return word
    if mode != "uncased":
        raise VocabError(f"unknown casing mode {mode!r}")
    word = word.lower()
    decomposed = unicodedata.normalize("NFD", word)
    return "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn")


def tokenize_word(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first split of one word into vocabulary pieces.

    Non-initial pieces must carry the continuation prefix.  A word with no
    valid segmentation, or longer than ``max_chars_per_word``, collapses to
    the unknown token.
    """
    if not word:
        raise VocabError("cannot tokenize an empty word")
    if len(word) > vocab.max_chars_per_word:
        return [vocab.unk_token]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = vocab.continuation_prefix + candidate
            if candidate in vocab.index:
                match = candidate
                break
            end -= 1
        if match is None:
            return [vocab.unk_token]
        pieces.append(match)
        start = end
    return pieces


def detokenize(subwords, vocab: Vocab) -> str:
    """Reconstruct the word: strip the continuation prefix off non-initial pieces."""
    if not subwords:
        raise VocabError("cannot detokenize an empty piece list")
    first = subwords[0]
    if first.startswith(vocab.continuation_prefix):
        raise VocabError(f"first piece {first!r} carries the continuation prefix")
    parts = [first]
    for piece in subwords[1:]:
        parts.append(piece.removeprefix(vocab.continuation_prefix))
    return "".join(parts)


@dataclass(frozen=True)
class WordPieceTokenizer:
    """A vocabulary paired with a casing mode, applied word by word."""

    vocab: Vocab
    mode: str = "cased"

    def tokenize_word(self, word: str) -> list[str]:
        normalized = normalize_word(word, self.mode)
        if not normalized:
            # e.g. a word made entirely of combining marks in uncased mode
            return [self.vocab.unk_token]
        return tokenize_word(normalized, self.vocab)


@dataclass(frozen=True)
class ExternalTokenization:
    """Per-sentence, per-word subword lists produced outside this package."""

    pieces: dict  # sentence id -> tuple of per-word piece tuples

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self.pieces


def ingest_external_tokenization(path, corpus: Corpus) -> ExternalTokenization:
    """Read and validate a ``[{"id": ..., "pieces": [[...]]}]`` file.

    Every record must name a corpus sentence and carry exactly one
    non-empty piece list per word of that sentence.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise VocabError(f"cannot read tokenization file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise VocabError(f"cannot parse tokenization file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise VocabError(f"tokenization file {path}: expected a top-level array")

    table = {}
    for rec in data:
        sid = str(rec["id"])
        if sid not in corpus:
            raise VocabError(f"tokenization for unknown sentence {sid!r}")
        if sid in table:
            raise VocabError(f"duplicate tokenization for sentence {sid!r}")
        sent = corpus[sid]
        pieces = rec["pieces"]
        if len(pieces) != len(sent.words):
            raise VocabError(
                f"sentence {sid!r}: tokenization has {len(pieces)} words, "
                f"corpus has {len(sent.words)}"
            )
        for w, plist in enumerate(pieces):
            if not plist:
                raise VocabError(f"sentence {sid!r}: word {w} has an empty piece list")
        table[sid] = tuple(tuple(str(p) for p in plist) for plist in pieces)
    return ExternalTokenization(table)


def word_pieces(tokenization, sentence) -> list[list[str]]:
    """Per-word piece lists for one sentence, from any tokenization source.

    Accepts a ``WordPieceTokenizer``, a bare ``Vocab`` (treated as cased),
    or an ``ExternalTokenization``.
    """
    if isinstance(tokenization, ExternalTokenization):
        got = tokenization.pieces.get(sentence.id)
        if got is None:
            raise VocabError(f"no external tokenization for sentence {sentence.id!r}")
        return [list(p) for p in got]
    if isinstance(tokenization, Vocab):
        tokenization = WordPieceTokenizer(tokenization, "cased")
    return [tokenization.tokenize_word(w) for w in sentence.words]
