"""Joint entity/relation tagger over frozen embeddings.

Pipeline shape: frozen per-position vectors, an optional subword-to-word
aggregation step, a recurrent partition-filter encoder, and two scoring
heads (span cells for entities, ordered start-word pairs for relations)
trained jointly with summed binary cross-entropy under Adam.

Encoder mechanics (this module's concrete design): the hidden state of
size H splits into three fixed disjoint coordinate blocks of H/3 each,
holding entity-specific, relation-specific, and shared neurons.  At every
step two monotone gate vectors (entity gate, relation gate) are produced
from the input and the previous memory by a cumulative transform over a
normalized score vector, g = cumsum(softmax(score)).  The entity gate
filters the candidate activation into the entity block, the relation gate
into the relation block, and their elementwise product into the shared
block; the concatenated blocks form the next memory.  Task features
concatenate the task block with the shared block and pass through tanh,
so each task sees its own neurons plus the shared ones and never the
other task's block.

Everything is plain numpy in 64-bit with hand-written reverse-mode
gradients, verified against central finite differences by ``grad_check``.
Training is single-threaded and fully deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .align import SUBWORD, WORD, EmbeddingTable, aggregate_embeddings
from .corpus import (
    ENTITY_LABELS,
    RELATION_LABELS,
    Corpus,
    EntityMention,
    RelationMention,
)
from .errors import TaggerError
from .scorer import Prediction, SentencePrediction, score_ner, score_re


@dataclass(frozen=True)
class TaggerConfig:
    hidden_size: int = 24          # split into three equal partitions
    aggregation: str = "sum"       # none | sum | average
    learning_rate: float = 2e-5
    batch_size: int = 20
    epochs: int = 100
    seed: int = 42
    threshold: float = 0.5         # strict > when predicting
    max_span_width: int = 10
    head_hidden: int = 32
    entity_labels: tuple = ENTITY_LABELS
    relation_labels: tuple = RELATION_LABELS

    def __post_init__(self):
        if self.hidden_size < 3 or self.hidden_size % 3 != 0:
            raise TaggerError(f"hidden_size must be a positive multiple of 3, got {self.hidden_size}")
        if self.aggregation not in ("none", "sum", "average"):
            raise TaggerError(f"unknown aggregation mode {self.aggregation!r}")
        if not 0.0 < self.threshold < 1.0:
            raise TaggerError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.max_span_width < 1:
            raise TaggerError(f"max_span_width must be positive, got {self.max_span_width}")
        object.__setattr__(self, "entity_labels", tuple(self.entity_labels))
        object.__setattr__(self, "relation_labels", tuple(self.relation_labels))

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "aggregation": self.aggregation,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "threshold": self.threshold,
            "max_span_width": self.max_span_width,
            "head_hidden": self.head_hidden,
            "entity_labels": list(self.entity_labels),
            "relation_labels": list(self.relation_labels),
        }

    @staticmethod
    def from_dict(data: dict) -> "TaggerConfig":
        known = {f for f in TaggerConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise TaggerError(f"unknown config keys: {sorted(unknown)}")
        return TaggerConfig(**data)


# parameter names, in canonical order
_ENC_NAMES = (
    "enc.w_cand", "enc.u_cand", "enc.b_cand",
    "enc.w_egate", "enc.u_egate", "enc.b_egate",
    "enc.w_rgate", "enc.u_rgate", "enc.b_rgate",
)
_HEAD_NAMES = ("ner.w1", "ner.b1", "ner.w2", "ner.b2",
               "re.w1", "re.b1", "re.w2", "re.b2")
PARAM_NAMES = _ENC_NAMES + _HEAD_NAMES


def feature_dim(config: TaggerConfig) -> int:
    """Width of each task's per-position feature vector (task + shared block)."""
    return 2 * (config.hidden_size // 3)


def _param_shapes(config: TaggerConfig, input_dim: int) -> dict:
    H = config.hidden_size
    F = feature_dim(config)
    Hh = config.head_hidden
    shapes = {}
    for gate in ("cand", "egate", "rgate"):
        shapes[f"enc.w_{gate}"] = (H, input_dim)
        shapes[f"enc.u_{gate}"] = (H, H)
        shapes[f"enc.b_{gate}"] = (H,)
    shapes["ner.w1"] = (Hh, 2 * F)
    shapes["ner.b1"] = (Hh,)
    shapes["ner.w2"] = (len(config.entity_labels), Hh)
    shapes["ner.b2"] = (len(config.entity_labels),)
    shapes["re.w1"] = (Hh, 2 * F)
    shapes["re.b1"] = (Hh,)
    shapes["re.w2"] = (len(config.relation_labels), Hh)
    shapes["re.b2"] = (len(config.relation_labels),)
    return shapes


def init_params(config: TaggerConfig, input_dim: int, rng=None) -> dict:
    """Scaled Gaussian weights (1/sqrt(fan-in)), zero biases."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in _param_shapes(config, input_dim).items():
        if name.endswith(("b_cand", "b_egate", "b_rgate", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = shape[-1]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def zero_params(config: TaggerConfig, input_dim: int) -> dict:
    return {name: np.zeros(shape, dtype=np.float64)
            for name, shape in _param_shapes(config, input_dim).items()}


def copy_params(params: dict) -> dict:
    return {name: arr.copy() for name, arr in params.items()}


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _cumax(scores):
    """Monotone gate in (0, 1]: running total of the normalized scores."""
    return np.cumsum(_softmax(scores))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_with_logits(z, y):
    """Stable summed binary cross-entropy; also returns d(loss)/d(logits)."""
    loss = float(np.sum(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return loss, _sigmoid(z) - y


def _pfn_forward(x_mat, params, hidden_size):
    H = hidden_size
    K = H // 3
    n = x_mat.shape[0]
    ent = np.empty((n, 2 * K), dtype=np.float64)
    rel = np.empty((n, 2 * K), dtype=np.float64)
    w_c, u_c, b_c = params["enc.w_cand"], params["enc.u_cand"], params["enc.b_cand"]
    w_e, u_e, b_e = params["enc.w_egate"], params["enc.u_egate"], params["enc.b_egate"]
    w_r, u_r, b_r = params["enc.w_rgate"], params["enc.u_rgate"], params["enc.b_rgate"]
    memory = np.zeros(H, dtype=np.float64)
    steps = []
    for t in range(n):
        x = x_mat[t]
        cand = np.tanh(w_c @ x + u_c @ memory + b_c)
        s_e = _softmax(w_e @ x + u_e @ memory + b_e)
        g_e = np.cumsum(s_e)
        s_r = _softmax(w_r @ x + u_r @ memory + b_r)
        g_r = np.cumsum(s_r)
        p_ent = g_e[:K] * cand[:K]
        p_rel = g_r[K:2 * K] * cand[K:2 * K]
        p_shared = g_e[2 * K:] * g_r[2 * K:] * cand[2 * K:]
        f_ent = np.tanh(np.concatenate([p_ent, p_shared]))
        f_rel = np.tanh(np.concatenate([p_rel, p_shared]))
        ent[t] = f_ent
        rel[t] = f_rel
        steps.append((x, memory, cand, s_e, g_e, s_r, g_r, f_ent, f_rel))
        memory = np.concatenate([p_ent, p_rel, p_shared])
    return ent, rel, steps


def pfn_encode(features, params) -> tuple:
    """Encode a position-by-dimension matrix into per-task feature matrices.

    Returns (entity features, relation features), each one row per input
    position with width two thirds of the hidden size.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise TaggerError("features must be a 2-d matrix")
    hidden = params["enc.b_cand"].shape[0]
    if params["enc.w_cand"].shape[1] != features.shape[1]:
        raise TaggerError(
            f"feature dimension {features.shape[1]} does not match parameters "
            f"(expected {params['enc.w_cand'].shape[1]})"
        )
    ent, rel, _ = _pfn_forward(features, params, hidden)
    return ent, rel


def _pfn_backward(steps, d_ent, d_rel, params, hidden_size, grads):
    H = hidden_size
    K = H // 3
    u_c, u_e, u_r = params["enc.u_cand"], params["enc.u_egate"], params["enc.u_rgate"]
    d_mem = np.zeros(H, dtype=np.float64)
    for t in range(len(steps) - 1, -1, -1):
        x, memory, cand, s_e, g_e, s_r, g_r, f_ent, f_rel = steps[t]
        d_u_ent = d_ent[t] * (1.0 - f_ent * f_ent)
        d_u_rel = d_rel[t] * (1.0 - f_rel * f_rel)
        dp_ent = d_u_ent[:K] + d_mem[:K]
        dp_rel = d_u_rel[:K] + d_mem[K:2 * K]
        dp_shared = d_u_ent[K:] + d_u_rel[K:] + d_mem[2 * K:]

        d_cand = np.empty(H, dtype=np.float64)
        d_ge = np.zeros(H, dtype=np.float64)
        d_gr = np.zeros(H, dtype=np.float64)
        d_cand[:K] = dp_ent * g_e[:K]
        d_ge[:K] = dp_ent * cand[:K]
        d_cand[K:2 * K] = dp_rel * g_r[K:2 * K]
        d_gr[K:2 * K] = dp_rel * cand[K:2 * K]
        d_cand[2 * K:] = dp_shared * g_e[2 * K:] * g_r[2 * K:]
        d_ge[2 * K:] = dp_shared * g_r[2 * K:] * cand[2 * K:]
        d_gr[2 * K:] = dp_shared * g_e[2 * K:] * cand[2 * K:]

        # g = cumsum(s): d_s is the suffix sum of d_g
        d_se = np.cumsum(d_ge[::-1])[::-1]
        d_sr = np.cumsum(d_gr[::-1])[::-1]
        d_ae = s_e * (d_se - float(s_e @ d_se))
        d_ar = s_r * (d_sr - float(s_r @ d_sr))
        d_ac = d_cand * (1.0 - cand * cand)

        grads["enc.w_cand"] += np.outer(d_ac, x)
        grads["enc.u_cand"] += np.outer(d_ac, memory)
        grads["enc.b_cand"] += d_ac
        grads["enc.w_egate"] += np.outer(d_ae, x)
        grads["enc.u_egate"] += np.outer(d_ae, memory)
        grads["enc.b_egate"] += d_ae
        grads["enc.w_rgate"] += np.outer(d_ar, x)
        grads["enc.u_rgate"] += np.outer(d_ar, memory)
        grads["enc.b_rgate"] += d_ar

        d_mem = u_c.T @ d_ac + u_e.T @ d_ae + u_r.T @ d_ar


def enumerate_spans(n_words: int, max_width: int):
    """All (start, end) word-index cells with start <= end, width capped."""
    return [(i, j) for i in range(n_words) for j in range(i, min(i + max_width, n_words))]


def enumerate_pairs(n_words: int):
    """All ordered word-index pairs, including the diagonal."""
    return [(i, j) for i in range(n_words) for j in range(n_words)]


def _head_forward(feats, rows_i, rows_j, w1, b1, w2, b2):
    q = np.concatenate([feats[rows_i], feats[rows_j]], axis=1)
    hidden = np.tanh(q @ w1.T + b1)
    logits = hidden @ w2.T + b2
    return logits, (q, hidden)


def _head_backward(d_logits, cache, rows_i, rows_j, w1, w2, grads, prefix, d_feats):
    q, hidden = cache
    grads[prefix + ".w2"] += d_logits.T @ hidden
    grads[prefix + ".b2"] += d_logits.sum(axis=0)
    d_hidden = (d_logits @ w2) * (1.0 - hidden * hidden)
    grads[prefix + ".w1"] += d_hidden.T @ q
    grads[prefix + ".b1"] += d_hidden.sum(axis=0)
    d_q = d_hidden @ w1
    half = d_feats.shape[1]
    np.add.at(d_feats, rows_i, d_q[:, :half])
    np.add.at(d_feats, rows_j, d_q[:, half:])


def score_spans(entity_features, params, max_width: int = 10):
    """Independent span-cell probabilities from per-position entity features.

    Returns (cells, probabilities): cells are (start, end) index pairs over
    the feature rows, end inclusive; probabilities have one column per
    entity label, the logistic of a feedforward over the concatenated
    boundary features.
    """
    feats = np.asarray(entity_features, dtype=np.float64)
    cells = enumerate_spans(feats.shape[0], max_width)
    rows_i = np.fromiter((i for i, _ in cells), dtype=np.intp, count=len(cells))
    rows_j = np.fromiter((j for _, j in cells), dtype=np.intp, count=len(cells))
    logits, _ = _head_forward(feats, rows_i, rows_j,
                              params["ner.w1"], params["ner.b1"],
                              params["ner.w2"], params["ner.b2"])
    return cells, _sigmoid(logits)


def score_pairs(relation_features, params):
    """Independent ordered-pair probabilities, one column per relation label."""
    feats = np.asarray(relation_features, dtype=np.float64)
    cells = enumerate_pairs(feats.shape[0])
    rows_i = np.fromiter((i for i, _ in cells), dtype=np.intp, count=len(cells))
    rows_j = np.fromiter((j for _, j in cells), dtype=np.intp, count=len(cells))
    logits, _ = _head_forward(feats, rows_i, rows_j,
                              params["re.w1"], params["re.b1"],
                              params["re.w2"], params["re.b2"])
    return cells, _sigmoid(logits)


@dataclass
class _Item:
    """One sentence prepared for the model: features, row map, gold targets."""

    sentence: object
    x: np.ndarray            # (rows, D) float64
    word_rows: list          # word index -> feature row
    spans: list              # (start word, end word inclusive) cells
    span_rows_i: np.ndarray
    span_rows_j: np.ndarray
    y_span: np.ndarray       # (n_cells, n_entity_labels)
    pairs: list              # ordered (word, word) cells
    pair_rows_i: np.ndarray
    pair_rows_j: np.ndarray
    y_pair: np.ndarray
    pair_pos: dict           # (word i, word j) -> cell row


def _build_item(sent, x, word_rows, config: TaggerConfig) -> _Item:
    ent_idx = {label: i for i, label in enumerate(config.entity_labels)}
    rel_idx = {label: i for i, label in enumerate(config.relation_labels)}
    spans = enumerate_spans(len(sent.words), config.max_span_width)
    span_pos = {cell: i for i, cell in enumerate(spans)}
    y_span = np.zeros((len(spans), len(config.entity_labels)), dtype=np.float64)
    for ent in sent.entities:
        if ent.label not in ent_idx:
            raise TaggerError(f"sentence {sent.id!r}: entity label {ent.label!r} not in config")
        cell = span_pos.get((ent.start, ent.end - 1))
        if cell is not None:
            y_span[cell, ent_idx[ent.label]] = 1.0
    pairs = enumerate_pairs(len(sent.words))
    pair_pos = {cell: i for i, cell in enumerate(pairs)}
    y_pair = np.zeros((len(pairs), len(config.relation_labels)), dtype=np.float64)
    for rel in sent.relations:
        if rel.label not in rel_idx:
            raise TaggerError(f"sentence {sent.id!r}: relation label {rel.label!r} not in config")
        head = sent.entities[rel.head]
        tail = sent.entities[rel.tail]
        y_pair[pair_pos[(head.start, tail.start)], rel_idx[rel.label]] = 1.0
    rows = np.asarray(word_rows, dtype=np.intp)
    return _Item(
        sentence=sent,
        x=x,
        word_rows=list(word_rows),
        spans=spans,
        span_rows_i=rows[[i for i, _ in spans]],
        span_rows_j=rows[[j for _, j in spans]],
        y_span=y_span,
        pairs=pairs,
        pair_rows_i=rows[[i for i, _ in pairs]],
        pair_rows_j=rows[[j for _, j in pairs]],
        y_pair=y_pair,
        pair_pos=pair_pos,
    )


def _prepare_items(corpus: Corpus, table: EmbeddingTable, config: TaggerConfig,
                   ids, alignments=None) -> dict:
    items = {}
    if config.aggregation in ("sum", "average"):
        if table.level != SUBWORD:
            raise TaggerError(
                f"aggregation {config.aggregation!r} needs subword-level embeddings, "
                f"got {table.level!r}"
            )
        if alignments is None:
            raise TaggerError("aggregation needs token alignments")
        missing = [sid for sid in ids if sid not in table.vectors]
        if missing:
            raise TaggerError(f"no embeddings for sentence {missing[0]!r}")
        subset = EmbeddingTable(SUBWORD, {sid: table.vectors[sid] for sid in ids})
        word_table = aggregate_embeddings(subset, alignments, config.aggregation)
        for sid in ids:
            sent = corpus[sid]
            x = word_table.vectors[sid].astype(np.float64)
            if x.shape[0] != len(sent.words):
                raise TaggerError(
                    f"sentence {sid!r}: {x.shape[0]} word vectors for {len(sent.words)} words"
                )
            items[sid] = _build_item(sent, x, list(range(len(sent.words))), config)
        return items

    for sid in ids:
        sent = corpus[sid]
        mat = table.vectors.get(sid)
        if mat is None:
            raise TaggerError(f"no embeddings for sentence {sid!r}")
        if table.level == WORD:
            if mat.shape[0] != len(sent.words):
                raise TaggerError(
                    f"sentence {sid!r}: {mat.shape[0]} word vectors for {len(sent.words)} words"
                )
            x = mat.astype(np.float64)
            rows = list(range(len(sent.words)))
        else:
            if alignments is None or sid not in alignments:
                raise TaggerError(f"sentence {sid!r}: subword-level input needs an alignment")
            align = alignments[sid]
            if mat.shape[0] != align.n_positions:
                raise TaggerError(
                    f"sentence {sid!r}: {mat.shape[0]} positions, alignment expects "
                    f"{align.n_positions}"
                )
            # drop special rows; the model runs over real subword positions,
            # span boundaries sit on each word's first piece
            x = mat[align.lead:align.n_positions - align.trail].astype(np.float64)
            rows = [align.word_start(w) - align.lead for w in range(len(sent.words))]
        items[sid] = _build_item(sent, x, rows, config)
    return items


def loss_and_gradients(params: dict, items, config: TaggerConfig):
    """Summed binary cross-entropy over span and pair cells, with gradients."""
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    total = 0.0
    for item in items:
        ent, rel, steps = _pfn_forward(item.x, params, config.hidden_size)
        d_ent = np.zeros_like(ent)
        d_rel = np.zeros_like(rel)

        logits, cache = _head_forward(ent, item.span_rows_i, item.span_rows_j,
                                      params["ner.w1"], params["ner.b1"],
                                      params["ner.w2"], params["ner.b2"])
        loss, d_logits = _bce_with_logits(logits, item.y_span)
        total += loss
        _head_backward(d_logits, cache, item.span_rows_i, item.span_rows_j,
                       params["ner.w1"], params["ner.w2"], grads, "ner", d_ent)

        logits, cache = _head_forward(rel, item.pair_rows_i, item.pair_rows_j,
                                      params["re.w1"], params["re.b1"],
                                      params["re.w2"], params["re.b2"])
        loss, d_logits = _bce_with_logits(logits, item.y_pair)
        total += loss
        _head_backward(d_logits, cache, item.pair_rows_i, item.pair_rows_j,
                       params["re.w1"], params["re.w2"], grads, "re", d_rel)

        _pfn_backward(steps, d_ent, d_rel, params, config.hidden_size, grads)
    return total, grads


def _decode_item(params: dict, item: _Item, config: TaggerConfig) -> SentencePrediction:
    ent, rel, _ = _pfn_forward(item.x, params, config.hidden_size)
    logits, _cache = _head_forward(ent, item.span_rows_i, item.span_rows_j,
                                   params["ner.w1"], params["ner.b1"],
                                   params["ner.w2"], params["ner.b2"])
    span_probs = _sigmoid(logits)
    entities = []
    for cell, (i, j) in enumerate(item.spans):
        for li, label in enumerate(config.entity_labels):
            if span_probs[cell, li] > config.threshold:
                entities.append(EntityMention(label, i, j + 1))
    logits, _cache = _head_forward(rel, item.pair_rows_i, item.pair_rows_j,
                                   params["re.w1"], params["re.b1"],
                                   params["re.w2"], params["re.b2"])
    pair_probs = _sigmoid(logits)
    relations = []
    for h, head in enumerate(entities):
        for t, tail in enumerate(entities):
            if h == t:
                continue
            cell = item.pair_pos[(head.start, tail.start)]
            for li, label in enumerate(config.relation_labels):
                if pair_probs[cell, li] > config.threshold:
                    relations.append(RelationMention(label, h, t))
    return SentencePrediction(tuple(entities), tuple(relations))


def decode(params: dict, table: EmbeddingTable, sentence, config: TaggerConfig,
           alignment=None) -> SentencePrediction:
    """Predict entities and relations for one sentence from trained parameters."""
    alignments = {sentence.id: alignment} if alignment is not None else None
    corpus = Corpus((sentence,))
    items = _prepare_items(corpus, table, config, [sentence.id], alignments)
    return _decode_item(params, items[sentence.id], config)


def decode_corpus(params: dict, table: EmbeddingTable, corpus: Corpus,
                  config: TaggerConfig, ids=None, alignments=None) -> Prediction:
    ids = list(ids) if ids is not None else [s.id for s in corpus.sentences]
    items = _prepare_items(corpus, table, config, ids, alignments)
    return Prediction({sid: _decode_item(params, items[sid], config) for sid in ids})


class _Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(a) for n, a in params.items()}
        self.v = {n: np.zeros_like(a) for n, a in params.items()}

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, arr in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            arr -= lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass
class TrainResult:
    params: dict
    log: list                # one {"epoch", "train_loss", "dev_ner_f1", "dev_re_f1"} per epoch
    best_epoch: int | None   # epoch whose checkpoint is returned, None without dev


def train(corpus: Corpus, table: EmbeddingTable, config: TaggerConfig,
          train_ids=None, dev_ids=None, alignments=None) -> TrainResult:
    """Train the tagger; returns the best dev checkpoint and the epoch log.

    The best epoch is the one maximizing the mean of dev NER and RE F1;
    without a dev set the final parameters are returned.  Deterministic
    for a fixed config seed.
    """
    train_ids = list(train_ids) if train_ids is not None else [s.id for s in corpus.sentences]
    dev_ids = list(dev_ids) if dev_ids is not None else []
    if not train_ids:
        raise TaggerError("no training sentences")
    items = _prepare_items(corpus, table, config, list(dict.fromkeys(train_ids + dev_ids)),
                           alignments)
    input_dim = items[train_ids[0]].x.shape[1]
    rng = np.random.default_rng(config.seed)
    params = init_params(config, input_dim, rng)
    if config.epochs == 0:
        return TrainResult(params, [], None)

    adam = _Adam(params)
    log = []
    best_score, best_epoch, best_params = None, None, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ids))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [items[train_ids[i]] for i in order[start:start + config.batch_size]]
            loss, grads = loss_and_gradients(params, batch, config)
            if not np.isfinite(loss):
                raise TaggerError(f"non-finite loss at epoch {epoch}, batch {b}")
            epoch_loss += loss
            adam.step(params, grads, config.learning_rate)
        dev_ner = dev_re = None
        if dev_ids:
            pred = Prediction({sid: _decode_item(params, items[sid], config) for sid in dev_ids})
            dev_ner = score_ner(corpus, pred, dev_ids).f1
            dev_re = score_re(corpus, pred, dev_ids).f1
            mean_f1 = (dev_ner + dev_re) / 2.0
            if best_score is None or mean_f1 > best_score:
                best_score, best_epoch, best_params = mean_f1, epoch, copy_params(params)
        log.append({"epoch": epoch, "train_loss": epoch_loss,
                    "dev_ner_f1": dev_ner, "dev_re_f1": dev_re})
    if best_params is not None:
        return TrainResult(best_params, log, best_epoch)
    return TrainResult(params, log, None)


def write_training_log(log, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")


def finite_difference_error(loss_fn, params: dict, analytic: dict, coords,
                            step: float = 1e-4) -> float:
    """Worst-case disagreement between analytic and central-difference gradients.

    ``coords`` are (name, flat index) pairs; parameters are perturbed in
    place and restored.  The per-coordinate error is |analytic - numeric| /
    max(|analytic|, |numeric|, 1): relative, with a unit floor so
    near-zero gradients are judged on absolute disagreement.
    """
    worst = 0.0
    for name, flat in coords:
        arr = params[name]
        saved = arr.flat[flat]
        arr.flat[flat] = saved + step
        loss_plus = loss_fn(params)
        arr.flat[flat] = saved - step
        loss_minus = loss_fn(params)
        arr.flat[flat] = saved
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        ana = analytic[name].flat[flat]
        err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1.0)
        worst = max(worst, err)
    return worst


def grad_check(params: dict, corpus: Corpus, table: EmbeddingTable,
               config: TaggerConfig, ids=None, alignments=None,
               n_coords: int = 200, step: float = 1e-4, seed: int = 0,
               corrupt=None) -> float:
    """Verify the model's gradients on one batch of sentences.

    Central finite differences with the given step, in 64-bit, over a
    random subset of ``n_coords`` coordinates (all of them when the model
    is smaller).  ``corrupt`` is a verification hook: a callable applied
    to the analytic gradients (negative-control fixtures corrupt them on
    purpose and expect a large error).
    """
    ids = list(ids) if ids is not None else [s.id for s in corpus.sentences]
    items = list(_prepare_items(corpus, table, config, ids, alignments).values())
    loss0, analytic = loss_and_gradients(params, items, config)
    if not np.isfinite(loss0):
        raise TaggerError("loss is not finite at the supplied parameters")
    if corrupt is not None:
        corrupt(analytic)

    coords = [(name, i) for name in PARAM_NAMES if name in params
              for i in range(params[name].size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]
    return finite_difference_error(
        lambda p: _loss_only(p, items, config)[0], params, analytic, coords, step)


def _loss_only(params, items, config):
    total = 0.0
    for item in items:
        ent, rel, _ = _pfn_forward(item.x, params, config.hidden_size)
        logits, _c = _head_forward(ent, item.span_rows_i, item.span_rows_j,
                                   params["ner.w1"], params["ner.b1"],
                                   params["ner.w2"], params["ner.b2"])
        loss, _d = _bce_with_logits(logits, item.y_span)
        total += loss
        logits, _c = _head_forward(rel, item.pair_rows_i, item.pair_rows_j,
                                   params["re.w1"], params["re.b1"],
                                   params["re.w2"], params["re.b2"])
        loss, _d = _bce_with_logits(logits, item.y_pair)
        total += loss
    return total, None


# ---------------------------------------------------------------------------
# Checkpoint file format: versioned binary with named float32 blocks.

_CKPT_MAGIC = b"SGLT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict, config: TaggerConfig) -> None:
    config_blob = json.dumps(config.to_dict()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params as float64, config echo)."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise TaggerError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(raw)
    if bytes(view[:4]) != _CKPT_MAGIC:
        raise TaggerError(f"{path}: not a tagger checkpoint")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != _CKPT_VERSION:
        raise TaggerError(f"{path}: unsupported checkpoint version {version}")
    (config_len,) = struct.unpack_from("<I", view, 8)
    offset = 12
    config = TaggerConfig.from_dict(json.loads(bytes(view[offset:offset + config_len])))
    offset += config_len
    (n_blocks,) = struct.unpack_from("<I", view, offset)
    offset += 4
    params = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", view, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(view, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
        params[name] = arr.astype(np.float64)
    return params, config
