import json
import math

import numpy as np
import pytest

from seglens.align import EmbeddingTable, build_alignment
from seglens.corpus import Corpus, EntityMention
from seglens.errors import TaggerError
from seglens import tagger
from seglens.tagger import (
    TaggerConfig,
    decode,
    decode_corpus,
    enumerate_pairs,
    enumerate_spans,
    finite_difference_error,
    grad_check,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    pfn_encode,
    save_checkpoint,
    score_pairs,
    score_spans,
    train,
    zero_params,
)

from conftest import random_word_table, sent


def toy_corpus():
    return Corpus((
        sent("t0", ["a", "b", "c", "d", "e"],
             [("Drug", 0, 1), ("AdverseEffect", 2, 4)], [("AdverseEffectOf", 1, 0)]),
        sent("t1", ["f", "g", "h", "i"], [("Drug", 1, 3)]),
        sent("t2", ["j", "k", "l", "m", "n", "o"],
             [("Drug", 5, 6), ("AdverseEffect", 0, 2)], [("AdverseEffectOf", 1, 0)]),
        sent("t3", ["p", "q", "r"], [("AdverseEffect", 0, 3)]),
        sent("t4", ["s", "t", "u", "v", "w"],
             [("Drug", 2, 3), ("AdverseEffect", 4, 5)], [("AdverseEffectOf", 1, 0)]),
    ))


SMALL = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none")


# --- independent scalar re-implementation of the encoder --------------------


def scalar_encoder_reference(x_rows, params, hidden):
    """Step-by-step scalar encoder, plain python floats only."""
    K = hidden // 3

    def matvec(m, v):
        return [sum(m[i][j] * v[j] for j in range(len(v))) for i in range(len(m))]

    def add(*vs):
        return [sum(parts) for parts in zip(*vs)]

    def softmax(v):
        top = max(v)
        exps = [math.exp(a - top) for a in v]
        total = sum(exps)
        return [e / total for e in exps]

    def cumsum(v):
        out, acc = [], 0.0
        for a in v:
            acc += a
            out.append(acc)
        return out

    p = {k: v.tolist() for k, v in params.items()}
    memory = [0.0] * hidden
    ent_rows, rel_rows = [], []
    for x in x_rows:
        cand = [math.tanh(v) for v in add(matvec(p["enc.w_cand"], x),
                                          matvec(p["enc.u_cand"], memory),
                                          p["enc.b_cand"])]
        ge = cumsum(softmax(add(matvec(p["enc.w_egate"], x),
                                matvec(p["enc.u_egate"], memory),
                                p["enc.b_egate"])))
        gr = cumsum(softmax(add(matvec(p["enc.w_rgate"], x),
                                matvec(p["enc.u_rgate"], memory),
                                p["enc.b_rgate"])))
        p_ent = [ge[i] * cand[i] for i in range(K)]
        p_rel = [gr[K + i] * cand[K + i] for i in range(K)]
        p_shared = [ge[2 * K + i] * gr[2 * K + i] * cand[2 * K + i] for i in range(K)]
        ent_rows.append([math.tanh(v) for v in p_ent + p_shared])
        rel_rows.append([math.tanh(v) for v in p_rel + p_shared])
        memory = p_ent + p_rel + p_shared
    return ent_rows, rel_rows


class TestEncoder:
    def test_zero_weights_give_zero_features_equal_across_tasks(self):
        params = zero_params(SMALL, input_dim=4)
        ent, rel = pfn_encode(np.ones((1, 4)), params)
        np.testing.assert_array_equal(ent, np.zeros((1, 8)))
        np.testing.assert_array_equal(ent, rel)

    def test_duplicated_sentence_rows_identical(self):
        rng = np.random.default_rng(0)
        params = init_params(SMALL, 4, rng)
        x = rng.standard_normal((3, 4))
        ent1, rel1 = pfn_encode(x, params)
        ent2, rel2 = pfn_encode(x, params)
        np.testing.assert_array_equal(ent1, ent2)
        np.testing.assert_array_equal(rel1, rel2)

    def test_matches_scalar_reference(self):
        # W=3, D=4, H=6 against an independent scalar implementation
        config = TaggerConfig(hidden_size=6, head_hidden=8, aggregation="none")
        rng = np.random.default_rng(42)
        params = init_params(config, 4, rng)
        x = rng.standard_normal((3, 4))
        ent, rel = pfn_encode(x, params)
        ref_ent, ref_rel = scalar_encoder_reference(x.tolist(), params, 6)
        np.testing.assert_allclose(ent, ref_ent, atol=1e-6)
        np.testing.assert_allclose(rel, ref_rel, atol=1e-6)

    def test_partition_blocks_stay_disjoint(self):
        # both tasks read the same shared block, and each task's own block
        # is invisible to the other task within a step
        config = TaggerConfig(hidden_size=9, head_hidden=8, aggregation="none")
        K = 3
        rng = np.random.default_rng(1)
        params = init_params(config, 4, rng)
        x = rng.standard_normal((4, 4))
        ent, rel = pfn_encode(x, params)
        # shared halves are the same coordinates for both tasks
        np.testing.assert_array_equal(ent[:, K:], rel[:, K:])
        # a candidate perturbation confined to the relation block cannot
        # reach the entity features of that step (single step: no carryover)
        bumped = {k: v.copy() for k, v in params.items()}
        bumped["enc.w_cand"][K:2 * K] += 0.5
        ent2, rel2 = pfn_encode(x[:1], bumped)
        np.testing.assert_array_equal(pfn_encode(x[:1], params)[0], ent2)
        assert not np.array_equal(pfn_encode(x[:1], params)[1], rel2)

    def test_dimension_mismatch_rejected(self):
        params = init_params(SMALL, 4)
        with pytest.raises(TaggerError, match="dimension"):
            pfn_encode(np.zeros((2, 5)), params)


class TestHeads:
    def test_zero_weights_probabilities_exactly_half(self):
        params = zero_params(SMALL, 4)
        feats = np.zeros((3, 8))
        _, span_probs = score_spans(feats, params, max_width=2)
        assert np.all(span_probs == 0.5)
        _, pair_probs = score_pairs(feats, params)
        assert np.all(pair_probs == 0.5)

    def test_span_enumeration_two_words_width_two(self):
        assert enumerate_spans(2, 2) == [(0, 0), (0, 1), (1, 1)]
        cells, probs = score_spans(np.zeros((2, 8)), zero_params(SMALL, 4), max_width=2)
        assert len(cells) == 3
        assert probs.shape == (3, 2)  # one column per entity label

    def test_pair_enumeration_three_words(self):
        assert len(enumerate_pairs(3)) == 9
        _, probs = score_pairs(np.zeros((3, 8)), zero_params(SMALL, 4))
        assert probs.shape == (9, 1)

    def test_width_cap_respected(self):
        spans = enumerate_spans(6, 2)
        assert all(j - i + 1 <= 2 for i, j in spans)
        assert (0, 2) not in spans


class TestDecode:
    def test_zero_weights_predict_nothing(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=0)
        params = zero_params(SMALL, 8)
        got = decode(params, table, corpus["t0"], SMALL)
        assert got.entities == ()
        assert got.relations == ()

    def test_missing_sentence_named(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=0)
        table.vectors.pop("t3")
        params = zero_params(SMALL, 8)
        with pytest.raises(TaggerError, match="t3"):
            decode(params, table, corpus["t3"], SMALL)


class TestGradients:
    def small_setup(self, seed=0, dim=8):
        corpus = Corpus((
            sent("g0", ["a", "b", "c", "d"],
                 [("Drug", 0, 1), ("AdverseEffect", 2, 4)], [("AdverseEffectOf", 1, 0)]),
            sent("g1", ["f", "g", "h"], [("Drug", 1, 2)]),
        ))
        table = random_word_table(corpus, dim=dim, seed=seed)
        return corpus, table

    def test_linear_map_is_exact_to_roundoff(self):
        # central differences are exact for linear functions; this pins the
        # probe itself before trusting it on the full model
        coeff = np.asarray([[2.0, -3.0], [0.5, 4.0]])
        params = {"w": np.asarray([[0.3, -0.2], [0.9, 1.1]])}

        def loss_fn(p):
            return float(np.sum(coeff * p["w"]))

        analytic = {"w": coeff.copy()}
        coords = [("w", i) for i in range(4)]
        assert finite_difference_error(loss_fn, params, analytic, coords) < 1e-8

    def test_full_model_below_tolerance(self):
        corpus, table = self.small_setup()
        params = init_params(SMALL, 8, np.random.default_rng(0))
        err = grad_check(params, corpus, table, SMALL, n_coords=200, seed=0)
        assert err < 1e-4

    def test_corrupted_gradient_fails(self):
        corpus, table = self.small_setup()
        params = init_params(SMALL, 8, np.random.default_rng(0))

        def corrupt(grads):
            grads["ner.w1"] += 1.0

        err = grad_check(params, corpus, table, SMALL, n_coords=200, seed=0,
                         corrupt=corrupt)
        assert err > 1e-2

    def test_subword_mode_gradients(self):
        # multi-piece words with special rows exercise the projection path
        corpus = Corpus((sent("g0", ["ab", "c"],
                              [("Drug", 0, 1)], []),))
        align_map = {"g0": build_alignment(["ab", "c"], [["a", "##b"], ["c"]],
                                           specials=(1, 1))}
        rng = np.random.default_rng(3)
        table = EmbeddingTable("subword", {"g0": rng.standard_normal((5, 6)).astype(np.float32)})
        config = TaggerConfig(hidden_size=9, head_hidden=8, aggregation="none")
        params = init_params(config, 6, np.random.default_rng(1))
        err = grad_check(params, corpus, table, config, alignments=align_map,
                         n_coords=150, seed=1)
        assert err < 1e-4


class TestTraining:
    def test_zero_epochs_returns_initialization(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none", epochs=0)
        result = train(corpus, table, config)
        expected = init_params(config, 8, np.random.default_rng(config.seed))
        assert result.log == []
        assert result.best_epoch is None
        for name in expected:
            np.testing.assert_array_equal(result.params[name], expected[name])

    def test_identical_runs_bitwise_identical_logs(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none",
                              epochs=6, learning_rate=1e-2, seed=11)
        dev = [s.id for s in corpus.sentences]
        a = train(corpus, table, config, dev_ids=dev)
        b = train(corpus, table, config, dev_ids=dev)
        assert json.dumps(a.log) == json.dumps(b.log)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_loss_decreases_on_toy_data(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none",
                              epochs=25, learning_rate=1e-2, seed=5)
        result = train(corpus, table, config)
        assert result.log[-1]["train_loss"] < 0.5 * result.log[0]["train_loss"]

    def test_non_finite_loss_reports_coordinates(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        bad = EmbeddingTable("word", {
            sid: np.where(np.isfinite(mat), mat, mat) for sid, mat in table.vectors.items()
        })
        bad.vectors["t0"] = bad.vectors["t0"].copy()
        bad.vectors["t0"][0, 0] = np.nan
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none",
                              epochs=2, batch_size=100)
        with pytest.raises(TaggerError, match="epoch 1"):
            train(corpus, bad, config)

    def test_missing_embeddings_named(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        table.vectors.pop("t2")
        with pytest.raises(TaggerError, match="t2"):
            train(corpus, table, SMALL)

    def test_best_dev_checkpoint_returned(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none",
                              epochs=40, learning_rate=1e-2, seed=2)
        dev = [s.id for s in corpus.sentences]
        result = train(corpus, table, config, dev_ids=dev)
        best = max(result.log, key=lambda r: (r["dev_ner_f1"] + r["dev_re_f1"]) / 2)
        assert result.best_epoch is not None
        got = (result.log[result.best_epoch - 1]["dev_ner_f1"],
               result.log[result.best_epoch - 1]["dev_re_f1"])
        assert (best["dev_ner_f1"], best["dev_re_f1"]) == got


class TestAggregationPlumbing:
    def test_one_piece_per_word_modes_collapse(self):
        """With one subword per word the three aggregation modes are the
        same model; per-epoch losses must agree exactly."""
        corpus = toy_corpus()
        word_table = random_word_table(corpus, dim=8, seed=9)
        alignments = {
            s.id: build_alignment(s.words, [["w"] for _ in s.words], (0, 0))
            for s in corpus.sentences
        }
        subword_table = EmbeddingTable(
            "subword", {sid: mat.copy() for sid, mat in word_table.vectors.items()})

        losses = {}
        for mode in ("none", "sum", "average"):
            config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation=mode,
                                  epochs=5, learning_rate=1e-2, seed=21)
            result = train(corpus, subword_table, config, alignments=alignments)
            losses[mode] = [r["train_loss"] for r in result.log]
        assert losses["none"] == pytest.approx(losses["sum"], rel=1e-6)
        assert losses["sum"] == pytest.approx(losses["average"], rel=1e-6)

    def test_word_level_table_with_aggregation_rejected(self):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=9)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="sum")
        with pytest.raises(TaggerError, match="subword"):
            train(corpus, table, config)


class TestCheckpoint:
    def test_roundtrip_preserves_predictions(self, tmp_path):
        corpus = toy_corpus()
        table = random_word_table(corpus, dim=8, seed=1)
        config = TaggerConfig(hidden_size=12, head_hidden=16, aggregation="none",
                              epochs=60, learning_rate=1e-2, seed=4)
        result = train(corpus, table, config)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, result.params, config)
        params, config_echo = load_checkpoint(path)
        assert config_echo == config
        for name, arr in result.params.items():
            np.testing.assert_allclose(params[name], arr, atol=1e-6)
        original = decode_corpus(result.params, table, corpus, config)
        reloaded = decode_corpus(params, table, corpus, config_echo)
        assert original.by_id == reloaded.by_id

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "nope.bin"
        path.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(TaggerError, match="not a tagger checkpoint"):
            load_checkpoint(path)


class TestConfig:
    def test_shipped_example_configs_parse(self):
        from pathlib import Path

        configs = Path(__file__).resolve().parent.parent / "configs"
        default = TaggerConfig.from_dict(
            json.loads((configs / "tagger_default.json").read_text()))
        assert default.learning_rate == 2e-5
        assert default.epochs == 100 and default.batch_size == 20
        toy = TaggerConfig.from_dict(
            json.loads((configs / "tagger_toy.json").read_text()))
        assert toy.learning_rate == pytest.approx(1e-2)
        assert toy.epochs == 300

    def test_hidden_size_must_divide_by_three(self):
        with pytest.raises(TaggerError, match="multiple of 3"):
            TaggerConfig(hidden_size=10)

    def test_threshold_bounds(self):
        with pytest.raises(TaggerError, match="threshold"):
            TaggerConfig(threshold=1.0)

    def test_dict_roundtrip(self):
        config = TaggerConfig(hidden_size=6, epochs=3)
        assert TaggerConfig.from_dict(config.to_dict()) == config

    def test_unknown_key_rejected(self):
        with pytest.raises(TaggerError, match="unknown config"):
            TaggerConfig.from_dict({"hidden_sizes": 12})
