"""Data model for ADE-style annotated corpora.

Sentences arrive pre-split into word tokens and carry typed entity spans
(word-index based, start inclusive, end exclusive) plus typed binary
relations between entities.  Everything is immutable after loading, so
corpora can be shared freely across workers.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError

logger = logging.getLogger(__name__)

DRUG = "Drug"
ADVERSE_EFFECT = "AdverseEffect"
ENTITY_LABELS = (DRUG, ADVERSE_EFFECT)
RELATION_LABEL = "AdverseEffectOf"
RELATION_LABELS = (RELATION_LABEL,)
OUT = "Out"

# The public ADE distribution spells labels with hyphens ("Adverse-Effect");
# accept the common spellings and normalize to one canonical form.
_ENTITY_ALIASES = {
    "drug": DRUG,
    "adverseeffect": ADVERSE_EFFECT,
    "ae": ADVERSE_EFFECT,
}
_RELATION_ALIASES = {
    "adverseeffect": RELATION_LABEL,
    "adverseeffectof": RELATION_LABEL,
    "ae": RELATION_LABEL,
}


def _label_key(raw: str) -> str:
    return raw.replace("-", "").replace("_", "").replace(" ", "").lower()


def canonical_entity_label(raw: str) -> str:
    try:
        return _ENTITY_ALIASES[_label_key(raw)]
    except KeyError:
        raise CorpusError(f"unknown entity label {raw!r}") from None


def canonical_relation_label(raw: str) -> str:
    try:
        return _RELATION_ALIASES[_label_key(raw)]
    except KeyError:
        raise CorpusError(f"unknown relation label {raw!r}") from None


@dataclass(frozen=True)
class EntityMention:
    label: str
    start: int  # word index, inclusive
    end: int    # word index, exclusive


@dataclass(frozen=True)
class RelationMention:
    label: str
    head: int  # index into the sentence's entity list
    tail: int


@dataclass(frozen=True)
class Sentence:
    id: str
    words: tuple[str, ...]
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationMention, ...] = ()

    def __post_init__(self):
        if not self.words:
            raise CorpusError(f"sentence {self.id}: empty word list")
        if any(w == "" for w in self.words):
            raise CorpusError(f"sentence {self.id}: empty word token")
        n = len(self.words)
        for ent in self.entities:
            if not (0 <= ent.start < ent.end <= n):
                raise CorpusError(
                    f"sentence {self.id}: entity span ({ent.start}, {ent.end}) "
                    f"out of bounds for {n} words"
                )
        n_ent = len(self.entities)
        for rel in self.relations:
            if not (0 <= rel.head < n_ent and 0 <= rel.tail < n_ent):
                raise CorpusError(
                    f"sentence {self.id}: relation references entity "
                    f"({rel.head}, {rel.tail}) outside 0..{n_ent - 1}"
                )
            if rel.head == rel.tail:
                raise CorpusError(f"sentence {self.id}: relation head equals tail")


def _overlapping_pairs(entities) -> int:
    count = 0
    for i in range(len(entities)):
        for j in range(i + 1, len(entities)):
            a, b = entities[i], entities[j]
            if a.start < b.end and b.start < a.end:
                count += 1
    return count


@dataclass(frozen=True)
class Corpus:
    sentences: tuple[Sentence, ...]
    overlapping_span_pairs: int = 0
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for sent in self.sentences:
            if sent.id in index:
                raise CorpusError(f"duplicate sentence id {sent.id!r}")
            index[sent.id] = sent
        object.__setattr__(self, "_by_id", index)

    def __len__(self):
        return len(self.sentences)

    def __getitem__(self, sentence_id: str) -> Sentence:
        try:
            return self._by_id[sentence_id]
        except KeyError:
            raise CorpusError(f"no sentence with id {sentence_id!r}") from None

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self._by_id

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.sentences)


def _parse_record(rec, sid: str) -> Sentence:
    if not isinstance(rec, dict) or "tokens" not in rec:
        raise CorpusError(f"sentence {sid}: record is not an object with 'tokens'")
    words = rec["tokens"]
    if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
        raise CorpusError(f"sentence {sid}: 'tokens' must be a list of strings")
    entities = tuple(
        EntityMention(canonical_entity_label(e["type"]), int(e["start"]), int(e["end"]))
        for e in rec.get("entities", ())
    )
    relations = tuple(
        RelationMention(canonical_relation_label(r["type"]), int(r["head"]), int(r["tail"]))
        for r in rec.get("relations", ())
    )
    try:
        return Sentence(sid, tuple(words), entities, relations)
    except CorpusError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"sentence {sid}: malformed record ({exc})") from exc


def load_corpus(path, format: str = "ade-json") -> Corpus:
    """Load and validate a corpus file.

    The only supported format is ``ade-json``: a top-level array of
    ``{"tokens": [...], "entities": [...], "relations": [...]}`` objects.
    Sentence ids come from an optional ``orig_id`` field, falling back to
    the array index.  Overlapping entity spans are legal; they are only
    counted and reported through ``Corpus.overlapping_span_pairs``.
    """
    if format != "ade-json":
        raise CorpusError(f"unsupported corpus format {format!r}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"cannot parse corpus file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise CorpusError(f"corpus file {path}: expected a top-level array")

    sentences = []
    overlaps = 0
    for i, rec in enumerate(data):
        sid = str(rec["orig_id"]) if isinstance(rec, dict) and "orig_id" in rec else str(i)
        sent = _parse_record(rec, sid)
        overlaps += _overlapping_pairs(sent.entities)
        sentences.append(sent)
    if overlaps:
        logger.warning("corpus %s: %d overlapping entity span pair(s) retained", path, overlaps)
    return Corpus(tuple(sentences), overlaps)


def save_corpus(corpus: Corpus, path) -> None:
    """Serialize a corpus back to the ade-json layout (round-trip safe)."""
    records = []
    for sent in corpus.sentences:
        records.append(
            {
                "tokens": list(sent.words),
                "entities": [
                    {"type": e.label, "start": e.start, "end": e.end} for e in sent.entities
                ],
                "relations": [
                    {"type": r.label, "head": r.head, "tail": r.tail} for r in sent.relations
                ],
                "orig_id": sent.id,
            }
        )
    Path(path).write_text(json.dumps(records, ensure_ascii=False, indent=1), encoding="utf-8")


@dataclass(frozen=True)
class Fold:
    train_ids: tuple[str, ...]
    dev_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    dev_fraction: float
    folds: tuple[Fold, ...]


def read_fold_file(path) -> list[int]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not all(isinstance(i, int) for i in data):
        raise CorpusError(f"fold file {path}: expected a JSON array of sentence indices")
    return data


def make_folds(corpus: Corpus, k: int = 10, dev_fraction: float = 0.15,
               seed: int = 42, external=None) -> FoldPlan:
    """Build a k-fold cross-validation plan over the corpus.

    Without ``external``, test partitions come from a seeded shuffle split
    into k near-equal chunks.  With ``external`` (a sequence of fold files
    or index lists, one per fold), the given test partitions are used
    verbatim and must partition the corpus.  In both cases the development
    set is carved from the remaining sentences by seeded shuffling, sized
    ``round(dev_fraction * len(remainder))``.
    """
    if k < 2:
        raise CorpusError(f"need at least 2 folds, got k={k}")
    if not 0 < dev_fraction < 1:
        raise CorpusError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    n = len(corpus)
    if k > n:
        raise CorpusError(f"cannot split {n} sentences into {k} folds")
    ids = list(corpus.ids)
    rng = random.Random(seed)

    if external is not None:
        if len(external) != k:
            raise CorpusError(f"got {len(external)} external folds for k={k}")
        test_chunks = []
        for item in external:
            indices = item if isinstance(item, list) else read_fold_file(item)
            bad = [i for i in indices if not 0 <= i < n]
            if bad:
                raise CorpusError(f"external fold index {bad[0]} outside 0..{n - 1}")
            test_chunks.append(indices)
        flat = [i for chunk in test_chunks for i in chunk]
        if len(flat) != n or len(set(flat)) != n:
            raise CorpusError("external folds do not partition the corpus")
    else:
        order = list(range(n))
        rng.shuffle(order)
        base, extra = divmod(n, k)
        test_chunks, pos = [], 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            test_chunks.append(order[pos:pos + size])
            pos += size

    folds = []
    for chunk in test_chunks:
        test_set = set(chunk)
        rest = [i for i in range(n) if i not in test_set]
        pool = list(rest)
        rng.shuffle(pool)
        n_dev = round(dev_fraction * len(pool))
        dev = sorted(pool[:n_dev])
        dev_set = set(dev)
        train = [i for i in rest if i not in dev_set]
        folds.append(
            Fold(
                train_ids=tuple(ids[i] for i in train),
                dev_ids=tuple(ids[i] for i in dev),
                test_ids=tuple(ids[i] for i in chunk),
            )
        )
    return FoldPlan(k=k, seed=seed, dev_fraction=dev_fraction, folds=tuple(folds))


def save_fold_plan(plan: FoldPlan, path) -> None:
    payload = {
        "k": plan.k,
        "seed": plan.seed,
        "dev_fraction": plan.dev_fraction,
        "folds": [
            {
                "train_ids": list(f.train_ids),
                "dev_ids": list(f.dev_ids),
                "test_ids": list(f.test_ids),
            }
            for f in plan.folds
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_fold_plan(path) -> FoldPlan:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        folds = tuple(
            Fold(tuple(f["train_ids"]), tuple(f["dev_ids"]), tuple(f["test_ids"]))
            for f in data["folds"]
        )
        return FoldPlan(int(data["k"]), int(data["seed"]), float(data["dev_fraction"]), folds)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"cannot read fold plan {path}: {exc}") from exc


def _fold_word(word: str, casing: str) -> str:
    if casing == "cased":
        return word
    if casing == "uncased":
        return word.lower()
    raise CorpusError(f"unknown casing mode {casing!r}")


def unique_entity_surfaces(corpus: Corpus, label: str, casing: str = "cased"):
    """Deduplicated entity surface strings of one type, with word lengths.

    The surface is the span's words joined by single spaces, lowercased in
    uncased mode before deduplication.  Returns ``[(surface, word_count)]``
    in first-occurrence order.
    """
    label = canonical_entity_label(label)
    seen = {}
    for sent in corpus.sentences:
        for ent in sent.entities:
            if ent.label != label:
                continue
            surface = _fold_word(" ".join(sent.words[ent.start:ent.end]), casing)
            if surface not in seen:
                seen[surface] = ent.end - ent.start
    return [(surface, length) for surface, length in seen.items()]


def entity_word_index(corpus: Corpus, casing: str = "cased") -> dict[str, set[str]]:
    """Unique words per entity type, plus the out-of-entity word set.

    A word that occurs inside any span of type T joins T's set (possibly
    several sets); a word that never occurs inside any entity span joins
    the ``Out`` set.
    """
    index: dict[str, set[str]] = {label: set() for label in ENTITY_LABELS}
    all_words: set[str] = set()
    for sent in corpus.sentences:
        for ent in sent.entities:
            for w in range(ent.start, ent.end):
                index[ent.label].add(_fold_word(sent.words[w], casing))
        all_words.update(_fold_word(w, casing) for w in sent.words)
    in_entity = set().union(*index.values()) if index else set()
    index[OUT] = all_words - in_entity
    return index
