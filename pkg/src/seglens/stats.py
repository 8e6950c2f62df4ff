"""Tokenization length statistics over sentences, entities, and plain words.

Reports how much a tokenizer inflates the corpus: mean sentence length in
words versus pieces, mean entity length in words versus pieces, and mean
pieces per unique word of each entity type (including the out-of-entity
population).  Means are taken over unique surfaces and words by default,
with occurrence-weighted variants behind a flag for diagnosis.  Special
tokens are never counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .corpus import OUT, Corpus, canonical_entity_label, entity_word_index, unique_entity_surfaces
from .errors import StatsError
from .wordpiece import ExternalTokenization, Vocab, WordPieceTokenizer, word_pieces


@dataclass(frozen=True)
class LengthReport:
    """Before/after means (2 decimals) with the percentage increase (1 decimal)."""

    population: str
    mean_before: float
    mean_after: float
    pct_increase: float


def _mean(values) -> float:
    values = list(values)
    if not values:
        raise StatsError("cannot take the mean of an empty population")
    return sum(values) / len(values)


def _report(population, before_raw, after_raw) -> LengthReport:
    # the percentage derives from the reported (rounded) means, so a reader
    # can always recompute it from the table row
    before = round(before_raw, 2)
    after = round(after_raw, 2)
    return LengthReport(population, before, after, round((after - before) / before * 100.0, 1))


def _piece_counter(corpus, tokenization, casing):
    """Piece count per casing-folded word, memoized.

    For external tokenizations the count comes from the word's first corpus
    occurrence (per-word piece lists are position-independent by contract);
    for vocabularies the word is tokenized on demand.
    """
    if isinstance(tokenization, ExternalTokenization):
        counts = {}
        for sent in corpus.sentences:
            for word, pieces in zip(sent.words, word_pieces(tokenization, sent)):
                folded = word.lower() if casing == "uncased" else word
                counts.setdefault(folded, len(pieces))

        def count(word):
            try:
                return counts[word]
            except KeyError:
                raise StatsError(f"word {word!r} not covered by the external tokenization")

        return count

    if isinstance(tokenization, Vocab):
        tokenization = WordPieceTokenizer(tokenization, casing)
    cache = {}

    def count(word):
        got = cache.get(word)
        if got is None:
            got = cache[word] = len(tokenization.tokenize_word(word))
        return got

    return count


def sentence_stats(corpus: Corpus, tokenization) -> LengthReport:
    """Mean sentence length in words versus pieces (no special tokens)."""
    if not corpus.sentences:
        raise StatsError("empty corpus")
    befores, afters = [], []
    for sent in corpus.sentences:
        pieces = word_pieces(tokenization, sent)
        befores.append(len(sent.words))
        afters.append(sum(len(p) for p in pieces))
    return _report("sentence", _mean(befores), _mean(afters))


def entity_stats(corpus: Corpus, tokenization, label: str, casing: str = "cased",
                 unique: bool = True):
    """Entity length report plus the mean pieces per word of the type.

    Entity means run over unique surfaces (or every occurrence when
    ``unique`` is off): word count before, total piece count after.  The
    word mean runs over the type's unique word inventory.
    """
    label = canonical_entity_label(label)
    count = _piece_counter(corpus, tokenization, casing)

    if unique:
        surfaces = [(s.split(" "), n) for s, n in unique_entity_surfaces(corpus, label, casing)]
    else:
        surfaces = []
        for sent in corpus.sentences:
            for ent in sent.entities:
                if ent.label == label:
                    words = [w.lower() if casing == "uncased" else w
                             for w in sent.words[ent.start:ent.end]]
                    surfaces.append((words, ent.end - ent.start))
    if not surfaces:
        raise StatsError(f"no {label} entities in the corpus")

    before = _mean(n for _, n in surfaces)
    after = _mean(sum(count(w) for w in words) for words, _ in surfaces)

    if unique:
        words = entity_word_index(corpus, casing)[label]
    else:
        words = []
        for sent in corpus.sentences:
            for ent in sent.entities:
                if ent.label == label:
                    words.extend(w.lower() if casing == "uncased" else w
                                 for w in sent.words[ent.start:ent.end])
    word_mean = round(_mean(count(w) for w in words), 2)
    return _report(label, before, after), word_mean


def out_word_stats(corpus: Corpus, tokenization, casing: str = "cased") -> float:
    """Mean pieces per unique word outside every entity span."""
    count = _piece_counter(corpus, tokenization, casing)
    words = entity_word_index(corpus, casing)[OUT]
    if not words:
        raise StatsError("no out-of-entity words in the corpus")
    return round(_mean(count(w) for w in words), 2)


def write_stats_csv(rows, path) -> None:
    """Emit report rows with the fixed column set used by the CLI.

    Each row is a dict with keys among ``tokenizer``, ``population``,
    ``mean_before``, ``mean_after``, ``pct_increase``, ``word_mean``;
    missing values render as empty cells.
    """
    fields = ["tokenizer", "population", "mean_before", "mean_after",
              "pct_increase", "word_mean"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            out = []
            for key in fields:
                value = row.get(key)
                if value is None:
                    out.append("")
                elif key == "pct_increase":
                    out.append(f"{value:.1f}")
                elif key in ("mean_before", "mean_after", "word_mean"):
                    out.append(f"{value:.2f}")
                else:
                    out.append(str(value))
            writer.writerow(out)
