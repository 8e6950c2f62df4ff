"""Character n-gram morphology profiles of entity word inventories.

Profiles fixed-length character substrings (default 4) over the unique
words of each entity type, excluding the substrings most frequent among
out-of-entity words, to expose domain suffix patterns such as "itis" or
"emia".  Substrings are contiguous character windows, not tokenizer
pieces, and repeats inside one word are kept.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

from .corpus import OUT


def char_ngrams(word: str, n: int) -> list[str]:
    """All contiguous length-n substrings, in order, repeats kept."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return [word[i:i + n] for i in range(len(word) - n + 1)]


@dataclass(frozen=True)
class NgramTable:
    """Per-label n-gram occurrence counts over unique words."""

    n: int
    counts: dict  # label -> Counter of n-gram -> count


def ngram_frequency_table(word_index, n: int = 4, lowercase: bool = True,
                          keep_repeats: bool = True) -> NgramTable:
    """Count n-grams over each label's unique word set.

    Each unique word contributes its n-grams once; with ``keep_repeats``
    a substring repeated inside a single word counts each time it occurs.
    """
    counts = {}
    for label, words in word_index.items():
        counter = Counter()
        for word in words:
            if lowercase:
                word = word.lower()
            grams = char_ngrams(word, n)
            if not keep_repeats:
                grams = set(grams)
            counter.update(grams)
        counts[label] = counter
    return NgramTable(n, counts)


def _ranked(counter: Counter):
    return sorted(counter.items(), key=lambda item: (-item[1], item[0]))


def build_exclusion_list(out_words, n: int = 4, top: int = 50,
                         lowercase: bool = True) -> frozenset:
    """The ``top`` most frequent n-grams of the out-of-entity words.

    Ties at the cutoff break lexicographically so the set is deterministic.
    """
    if top < 0:
        raise ValueError(f"top must be non-negative, got {top}")
    counter = Counter()
    for word in out_words:
        if lowercase:
            word = word.lower()
        counter.update(char_ngrams(word, n))
    return frozenset(g for g, _ in _ranked(counter)[:top])


@dataclass(frozen=True)
class RankedNgrams:
    label: str
    entries: tuple  # ((ngram, count), ...) ranked by count desc, ties lexicographic
    threshold_counts: tuple  # ((threshold, count_at_or_above), ...)


def top_k_and_thresholds(table: NgramTable, exclusion: frozenset, k: int = 25,
                         thresholds=(40, 30, 20, 10), labels=None) -> dict:
    """Rank each label's n-grams after exclusion, keep top k, profile thresholds.

    Threshold counts are taken within the kept top-k list: for each
    threshold t, how many kept n-grams occur at least t times.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if labels is None:
        labels = [label for label in table.counts if label != OUT]
    reports = {}
    for label in labels:
        counter = table.counts[label]
        kept = [(g, c) for g, c in _ranked(counter) if g not in exclusion][:k]
        tcounts = tuple((t, sum(1 for _, c in kept if c >= t)) for t in thresholds)
        reports[label] = RankedNgrams(label, tuple(kept), tcounts)
    return reports


def write_ngram_csv(reports: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["type", "ngram", "count", "rank"])
        for label in sorted(reports):
            for rank, (gram, count) in enumerate(reports[label].entries, start=1):
                writer.writerow([label, gram, count, rank])


def write_threshold_csv(reports: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["type", "threshold", "count"])
        for label in sorted(reports):
            for threshold, count in reports[label].threshold_counts:
                writer.writerow([label, threshold, count])
