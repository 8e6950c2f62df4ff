"""Strict span-level scoring for joint entity and relation extraction.

An entity prediction counts only when boundaries and type all match a gold
mention; a relation counts only when its type matches and both endpoint
entities strictly match gold entities of a gold relation, direction
respected.  Scores are micro-averaged.  Fold aggregation reports the mean
with the sample standard deviation, and a Welch t-test (paired variant
available) supports significance claims; its p-value comes from the
regularized incomplete beta evaluation of the t-distribution tail.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass

from .corpus import (
    Corpus,
    EntityMention,
    RelationMention,
    canonical_entity_label,
    canonical_relation_label,
)
from .errors import ScoreError


@dataclass(frozen=True)
class SentencePrediction:
    entities: tuple[EntityMention, ...]
    relations: tuple[RelationMention, ...]


@dataclass(frozen=True)
class Prediction:
    """Predicted mentions per sentence id, bounds-checked like gold."""

    by_id: dict

    def __contains__(self, sentence_id):
        return sentence_id in self.by_id

    @staticmethod
    def from_corpus(corpus: Corpus) -> "Prediction":
        return Prediction({s.id: SentencePrediction(s.entities, s.relations) for s in corpus.sentences})


def load_predictions(path, corpus: Corpus) -> Prediction:
    """Read a prediction file in the corpus JSON layout.

    Records carrying ``orig_id`` are matched to gold by id, so fold-subset
    files work; files without ids must align positionally with the full
    corpus.  Relations may connect an entity to itself, but every index
    must reference a predicted entity.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScoreError(f"cannot read prediction file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScoreError(f"cannot parse prediction file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ScoreError(f"prediction file {path}: expected a top-level array")
    positional = not any(isinstance(rec, dict) and "orig_id" in rec for rec in data)
    if positional and len(data) != len(corpus):
        raise ScoreError(
            f"prediction file {path} has {len(data)} records without ids; "
            f"the corpus has {len(corpus)} sentences"
        )
    by_id = {}
    for i, rec in enumerate(data):
        sid = str(rec["orig_id"]) if not positional else corpus.sentences[i].id
        if sid not in corpus:
            raise ScoreError(f"prediction for unknown sentence {sid!r}")
        if sid in by_id:
            raise ScoreError(f"duplicate prediction for sentence {sid!r}")
        gold = corpus[sid]
        entities = []
        for e in rec.get("entities", ()):
            ent = EntityMention(canonical_entity_label(e["type"]), int(e["start"]), int(e["end"]))
            if not (0 <= ent.start < ent.end <= len(gold.words)):
                raise ScoreError(
                    f"sentence {sid!r}: predicted span ({ent.start}, {ent.end}) out of bounds"
                )
            entities.append(ent)
        relations = []
        for r in rec.get("relations", ()):
            rel = RelationMention(canonical_relation_label(r["type"]), int(r["head"]), int(r["tail"]))
            if not (0 <= rel.head < len(entities) and 0 <= rel.tail < len(entities)):
                raise ScoreError(
                    f"sentence {sid!r}: relation references predicted entity "
                    f"({rel.head}, {rel.tail}) that does not exist"
                )
            relations.append(rel)
        by_id[sid] = SentencePrediction(tuple(entities), tuple(relations))
    return Prediction(by_id)


@dataclass(frozen=True)
class ScoreRow:
    """Micro precision/recall/F1, scaled by 100, with raw counts."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _prf(tp: int, fp: int, fn: int) -> ScoreRow:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ScoreRow(p * 100.0, r * 100.0, f1 * 100.0, tp, fp, fn)


def _count_matches(gold_items, pred_items):
    """Set-based strict matching: duplicate predictions count once,
    each gold item is matched at most once."""
    gold_counts = Counter(gold_items)
    pred_unique = set(pred_items)
    tp = sum(1 for item in pred_unique if gold_counts[item] > 0)
    fp = len(pred_unique) - tp
    fn = sum(gold_counts.values()) - tp
    return tp, fp, fn


def _entity_key(ent: EntityMention):
    return (ent.start, ent.end, ent.label)


def _relation_keys(entities, relations, sid):
    keys = []
    for rel in relations:
        try:
            head = entities[rel.head]
            tail = entities[rel.tail]
        except IndexError:
            raise ScoreError(
                f"sentence {sid!r}: relation references entity index outside the list"
            ) from None
        keys.append((_entity_key(head), _entity_key(tail), rel.label))
    return keys


def _iter_pairs(gold: Corpus, pred: Prediction, ids):
    wanted = set(ids) if ids is not None else None
    for sent in gold.sentences:
        if wanted is not None and sent.id not in wanted:
            continue
        got = pred.by_id.get(sent.id)
        if got is None:
            raise ScoreError(f"no prediction for sentence {sent.id!r}")
        yield sent, got


def score_ner(gold: Corpus, pred: Prediction, ids=None) -> ScoreRow:
    """Micro-averaged strict entity score over the given sentences."""
    tp = fp = fn = 0
    for sent, got in _iter_pairs(gold, pred, ids):
        t, f, n = _count_matches(
            [_entity_key(e) for e in sent.entities],
            [_entity_key(e) for e in got.entities],
        )
        tp, fp, fn = tp + t, fp + f, fn + n
    return _prf(tp, fp, fn)


def score_re(gold: Corpus, pred: Prediction, ids=None) -> ScoreRow:
    """Micro-averaged strict relation score: type plus both resolved endpoints."""
    tp = fp = fn = 0
    for sent, got in _iter_pairs(gold, pred, ids):
        t, f, n = _count_matches(
            _relation_keys(sent.entities, sent.relations, sent.id),
            _relation_keys(got.entities, got.relations, sent.id),
        )
        tp, fp, fn = tp + t, fp + f, fn + n
    return _prf(tp, fp, fn)


@dataclass(frozen=True)
class FoldSummary:
    mean: float
    std: float | None  # sample standard deviation; absent below 2 folds

    def __str__(self):
        if self.std is None:
            return f"{self.mean:.1f}"
        return f"{self.mean:.1f} ± {self.std:.1f}"


def fold_summary(values) -> FoldSummary:
    """Mean and sample standard deviation (n-1), one decimal each."""
    values = list(values)
    if not values:
        raise ScoreError("cannot summarize zero folds")
    mean = sum(values) / len(values)
    if len(values) < 2:
        return FoldSummary(round(mean, 1), None)
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return FoldSummary(round(mean, 1), round(math.sqrt(var), 1))


# ---------------------------------------------------------------------------
# Welch / paired t-test with a self-contained incomplete beta implementation.


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz method)."""
    MAXIT, EPS, FPMIN = 300, 3e-15, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise ScoreError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail mass of the t distribution with df degrees of freedom."""
    if df <= 0:
        raise ScoreError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    # P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    significant: bool  # at the 0.05 level
    paired: bool


def _mean_var(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, var


def welch_ttest(a, b, paired: bool = False) -> TTestResult:
    """Two-sided t-test between two score samples.

    Unpaired mode runs Welch's unequal-variance test with
    Welch-Satterthwaite degrees of freedom; paired mode runs a one-sample
    test on the differences.  Degenerate zero-variance data resolves to
    t=0, p=1 when the means agree and p=0 otherwise.
    """
    a, b = [float(x) for x in a], [float(x) for x in b]
    if len(a) < 2 or len(b) < 2:
        raise ScoreError("each sample needs at least 2 values")
    if paired:
        if len(a) != len(b):
            raise ScoreError("paired test needs samples of equal length")
        diffs = [x - y for x, y in zip(a, b)]
        mean, var = _mean_var(diffs)
        df = float(len(diffs) - 1)
        if var == 0.0:
            t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        else:
            t = mean / math.sqrt(var / len(diffs))
    else:
        ma, va = _mean_var(a)
        mb, vb = _mean_var(b)
        sa, sb = va / len(a), vb / len(b)
        se2 = sa + sb
        if se2 == 0.0:
            df = float(len(a) + len(b) - 2)
            t = 0.0 if ma == mb else math.copysign(math.inf, ma - mb)
        else:
            t = (ma - mb) / math.sqrt(se2)
            df = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    p = student_t_two_sided_p(t, df)
    return TTestResult(t, df, p, p <= 0.05, paired)


# ---------------------------------------------------------------------------
# Report writers.


def write_score_csv(rows, path) -> None:
    """Rows: dicts with task, fold, precision, recall, f1 (fold may be 'mean')."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "fold", "precision", "recall", "f1", "std"])
        for row in rows:
            writer.writerow([
                row["task"],
                row["fold"],
                "" if row.get("precision") is None else f"{row['precision']:.1f}",
                "" if row.get("recall") is None else f"{row['recall']:.1f}",
                f"{row['f1']:.1f}",
                "" if row.get("std") is None else f"{row['std']:.1f}",
            ])


def format_score_table(ner: FoldSummary, re_: FoldSummary, n_folds: int,
                       model: str = "frozen embeddings") -> str:
    """Monospace summary table, one row per model with NER and RE columns."""
    header = f"{'Model':<24}{'Folds':>6}  {'NER':>12}  {'RE':>12}"
    rule = "-" * len(header)
    row = f"{model:<24}{n_folds:>6}  {str(ner):>12}  {str(re_):>12}"
    return "\n".join([header, rule, row, ""])
