"""Word/subword alignment, embedding aggregation, and span projection.

Representations always arrive from files (JSON-lines or a binary layout);
nothing here computes contextual embeddings.  Aggregation collapses each
word's contiguous subword rows into a single word vector by summation or
averaging, accumulating in 64-bit and storing 32-bit.  Special-token rows
(leading/trailing positions that belong to no word) are dropped by every
aggregation mode.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError

SUBWORD = "subword"
WORD = "word"

_EMB_MAGIC = b"SGLE"
_EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIII")  # magic, version, positions, dimensions


@dataclass(frozen=True)
class TokenAlignment:
    """Per-word contiguous subword ranges, with special-token offsets."""

    ranges: tuple[tuple[int, int], ...]
    lead: int = 0
    trail: int = 0

    @property
    def n_words(self) -> int:
        return len(self.ranges)

    @property
    def n_positions(self) -> int:
        last = self.ranges[-1][1] if self.ranges else self.lead
        return last + self.trail

    def word_start(self, word_index: int) -> int:
        return self.ranges[word_index][0]


def build_alignment(words, pieces, specials=(0, 0)) -> TokenAlignment:
    """Assign cumulative subword ranges to words, after the leading specials."""
    if len(pieces) != len(words):
        raise AlignmentError(
            f"got piece lists for {len(pieces)} words, expected {len(words)}"
        )
    lead, trail = specials
    if lead < 0 or trail < 0:
        raise AlignmentError(f"negative special-token counts {specials!r}")
    ranges = []
    pos = lead
    for w, plist in enumerate(pieces):
        if not plist:
            raise AlignmentError(f"word {w} ({words[w]!r}) has no subword pieces")
        ranges.append((pos, pos + len(plist)))
        pos += len(plist)
    return TokenAlignment(tuple(ranges), lead, trail)


@dataclass
class EmbeddingTable:
    """Per-sentence position-by-dimension float32 matrices at one level."""

    level: str
    vectors: dict  # sentence id -> np.ndarray of shape (P, D)

    def __post_init__(self):
        if self.level not in (SUBWORD, WORD):
            raise AlignmentError(f"unknown embedding level {self.level!r}")
        dim = None
        for sid, mat in self.vectors.items():
            if mat.ndim != 2:
                raise AlignmentError(f"sentence {sid!r}: vectors must be a matrix")
            if dim is None:
                dim = mat.shape[1]
            elif mat.shape[1] != dim:
                raise AlignmentError(
                    f"sentence {sid!r}: dimension {mat.shape[1]} differs from {dim}"
                )

    @property
    def dim(self) -> int:
        for mat in self.vectors.values():
            return mat.shape[1]
        raise AlignmentError("empty embedding table has no dimension")

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self.vectors


def aggregate_embeddings(table: EmbeddingTable, alignments, mode: str) -> EmbeddingTable:
    """Collapse subword rows to one vector per word by sum or average."""
    if mode not in ("sum", "average"):
        raise AlignmentError(f"unknown aggregation mode {mode!r}")
    if table.level != SUBWORD:
        raise AlignmentError(f"can only aggregate subword-level tables, got {table.level!r}")
    out = {}
    for sid, mat in table.vectors.items():
        align = alignments.get(sid)
        if align is None:
            raise AlignmentError(f"no alignment for sentence {sid!r}")
        if mat.shape[0] != align.n_positions:
            raise AlignmentError(
                f"sentence {sid!r}: table has {mat.shape[0]} positions, "
                f"alignment expects {align.n_positions}"
            )
        acc = np.empty((align.n_words, mat.shape[1]), dtype=np.float64)
        wide = mat.astype(np.float64)
        for w, (a, b) in enumerate(align.ranges):
            acc[w] = wide[a:b].sum(axis=0)
            if mode == "average":
                acc[w] /= b - a
        out[sid] = acc.astype(np.float32)
    return EmbeddingTable(WORD, out)


def map_span_to_subwords(span, alignment: TokenAlignment) -> tuple[int, int]:
    """Project a word span to subword positions, first piece of each boundary word.

    Both boundaries map to the first subword of their word: the position of
    the span's initial word and the position where its final word begins.
    """
    start, end = span.start, span.end
    if not (0 <= start < end <= alignment.n_words):
        raise AlignmentError(
            f"span ({start}, {end}) out of range for {alignment.n_words} words"
        )
    return alignment.word_start(start), alignment.word_start(end - 1)


def write_embeddings_jsonl(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, mat in table.vectors.items():
            rec = {
                "id": sid,
                "level": table.level,
                "vectors": [[float(x) for x in row] for row in mat],
            }
            fh.write(json.dumps(rec) + "\n")


def load_embeddings_jsonl(path) -> EmbeddingTable:
    """Read one ``{"id", "level", "vectors"}`` record per line."""
    vectors = {}
    level = None
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise AlignmentError(f"{path}:{lineno}: bad JSON ({exc})") from exc
                sid = str(rec["id"])
                if sid in vectors:
                    raise AlignmentError(f"{path}:{lineno}: duplicate sentence {sid!r}")
                rec_level = rec["level"]
                if level is None:
                    level = rec_level
                elif rec_level != level:
                    raise AlignmentError(
                        f"{path}:{lineno}: level {rec_level!r} differs from {level!r}"
                    )
                mat = np.asarray(rec["vectors"], dtype=np.float32)
                if mat.ndim != 2:
                    raise AlignmentError(f"{path}:{lineno}: vectors must be a matrix")
                vectors[sid] = mat
    except OSError as exc:
        raise AlignmentError(f"cannot read embedding file {path}: {exc}") from exc
    if level is None:
        raise AlignmentError(f"embedding file {path} is empty")
    return EmbeddingTable(level, vectors)


def write_embeddings_binary(table: EmbeddingTable, directory) -> None:
    """Binary layout: an index plus one fixed-header matrix file per sentence."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"level": table.level, "sentences": {}}
    for n, (sid, mat) in enumerate(table.vectors.items()):
        name = f"{n:06d}.emb"
        header = _EMB_HEADER.pack(_EMB_MAGIC, _EMB_VERSION, mat.shape[0], mat.shape[1])
        payload = np.ascontiguousarray(mat, dtype="<f4").tobytes()
        (directory / name).write_bytes(header + payload)
        index["sentences"][sid] = name
    (directory / "index.json").write_text(json.dumps(index, indent=1), encoding="utf-8")


def load_embeddings_binary(directory) -> EmbeddingTable:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AlignmentError(f"cannot read embedding index in {directory}: {exc}") from exc
    vectors = {}
    for sid, name in index["sentences"].items():
        raw = (directory / name).read_bytes()
        if len(raw) < _EMB_HEADER.size:
            raise AlignmentError(f"{name}: truncated header")
        magic, version, p, d = _EMB_HEADER.unpack_from(raw)
        if magic != _EMB_MAGIC:
            raise AlignmentError(f"{name}: bad magic {magic!r}")
        if version != _EMB_VERSION:
            raise AlignmentError(f"{name}: unsupported version {version}")
        body = raw[_EMB_HEADER.size:]
        if len(body) != 4 * p * d:
            raise AlignmentError(f"{name}: expected {4 * p * d} data bytes, got {len(body)}")
        vectors[str(sid)] = np.frombuffer(body, dtype="<f4").reshape(p, d).copy()
    return EmbeddingTable(index["level"], vectors)
