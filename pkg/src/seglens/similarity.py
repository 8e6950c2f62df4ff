"""Cosine-similarity statistics over entity boundary-word representations.

Entities are grouped per type by the ordering of their words: one group of
start words, one of end words, and a joint group holding both (a
single-word entity contributes its one word once to the joint group).
Members are occurrence-level references into word-level embedding tables,
because contextual vectors differ per sentence.  Each group's score is the
mean pairwise cosine similarity times 100; fold-level scores average
unweighted across folds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .align import WORD, EmbeddingTable
from .corpus import ENTITY_LABELS, Corpus
from .errors import SimilarityError

logger = logging.getLogger(__name__)

START = "Start"
END = "End"
JOINT = "Joint"
POSITIONS = (START, END, JOINT)


@dataclass(frozen=True)
class EntityGroup:
    label: str
    position: str
    members: tuple  # ((sentence id, word index), ...)


def build_groups(corpus: Corpus, test_ids) -> list[EntityGroup]:
    """Boundary-word groups for every entity occurrence in the given sentences."""
    wanted = set(test_ids)
    starts = {label: [] for label in ENTITY_LABELS}
    ends = {label: [] for label in ENTITY_LABELS}
    joints = {label: [] for label in ENTITY_LABELS}
    for sent in corpus.sentences:
        if sent.id not in wanted:
            continue
        for ent in sent.entities:
            first = (sent.id, ent.start)
            last = (sent.id, ent.end - 1)
            starts[ent.label].append(first)
            ends[ent.label].append(last)
            joints[ent.label].append(first)
            if last != first:
                joints[ent.label].append(last)
    groups = []
    for label in ENTITY_LABELS:
        groups.append(EntityGroup(label, START, tuple(starts[label])))
        groups.append(EntityGroup(label, END, tuple(ends[label])))
        groups.append(EntityGroup(label, JOINT, tuple(joints[label])))
    return groups


def _resolve(group: EntityGroup, table: EmbeddingTable) -> np.ndarray:
    if table.level != WORD:
        raise SimilarityError(f"similarity needs word-level vectors, got {table.level!r}")
    rows = []
    dropped = 0
    for sid, w in group.members:
        mat = table.vectors.get(sid)
        if mat is None:
            raise SimilarityError(f"no embeddings for sentence {sid!r}")
        if not 0 <= w < mat.shape[0]:
            raise SimilarityError(f"sentence {sid!r}: word index {w} outside table")
        vec = mat[w].astype(np.float64)
        if not vec.any():
            dropped += 1
            continue
        rows.append(vec)
    if dropped:
        logger.warning(
            "%s/%s: dropped %d zero vector(s) from similarity pairing",
            group.label, group.position, dropped,
        )
    return np.asarray(rows, dtype=np.float64)


def group_similarity(group: EntityGroup, table: EmbeddingTable,
                     mode: str = "pairwise"):
    """Mean cosine similarity over a group, scaled by 100.

    ``pairwise`` averages over all unordered member pairs; ``centroid``
    averages each member's similarity to the group mean vector.  Groups
    with fewer than two usable members have no defined score and yield
    ``None``.
    """
    vectors = _resolve(group, table)
    n = len(vectors)
    if n < 2:
        return None
    if mode == "pairwise":
        units = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        total = units.sum(axis=0)
        # sum over unordered pairs of u_i . u_j, via |sum u|^2 = n + 2 * pair sum
        pair_sum = (total @ total - n) / 2.0
        score = pair_sum / (n * (n - 1) / 2.0)
    elif mode == "centroid":
        centroid = vectors.mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm == 0.0:
            return None
        units = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        score = float(np.mean(units @ (centroid / norm)))
    else:
        raise SimilarityError(f"unknown similarity mode {mode!r}")
    return float(score) * 100.0


@dataclass(frozen=True)
class SimilarityReport:
    per_fold: tuple       # one dict {(label, position): score or None} per fold
    aggregate: dict       # (label, position) -> unweighted fold mean, or None
    metadata: dict = field(default_factory=dict)


def fold_average_report(per_fold, metadata=None) -> SimilarityReport:
    """Unweighted mean of fold-level scores per (label, position).

    Folds where a group had no defined score are left out of that group's
    mean; a group undefined in every fold stays absent (None).
    """
    if not per_fold:
        raise SimilarityError("need at least one fold")
    keys = []
    for fold_scores in per_fold:
        for key in fold_scores:
            if key not in keys:
                keys.append(key)
    aggregate = {}
    for key in keys:
        present = [s[key] for s in per_fold if s.get(key) is not None]
        aggregate[key] = sum(present) / len(present) if present else None
    return SimilarityReport(tuple(per_fold), aggregate, dict(metadata or {}))


def compute_similarity_report(corpus: Corpus, plan, table: EmbeddingTable,
                              mode: str = "pairwise", workers: int = 1) -> SimilarityReport:
    """Per-fold group scores over a fold plan's test partitions, then aggregate."""

    def one_fold(fold):
        scores = {}
        for group in build_groups(corpus, fold.test_ids):
            scores[(group.label, group.position)] = group_similarity(group, table, mode)
        return scores

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_fold = list(pool.map(one_fold, plan.folds))
    else:
        per_fold = [one_fold(fold) for fold in plan.folds]
    meta = {
        "mode": mode,
        "joint_rule": "single-word entities contribute one member to the joint group",
    }
    return fold_average_report(per_fold, meta)


def write_similarity_csv(report: SimilarityReport, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "position", "fold", "score"])
        for f, fold_scores in enumerate(report.per_fold):
            for (label, position), score in sorted(fold_scores.items()):
                writer.writerow([label, position, f,
                                 "" if score is None else f"{score:.2f}"])
        for (label, position), score in sorted(report.aggregate.items()):
            writer.writerow([label, position, "mean",
                             "" if score is None else f"{score:.2f}"])
