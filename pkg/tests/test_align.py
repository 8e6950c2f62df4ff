import numpy as np
import pytest

from seglens.align import (
    EmbeddingTable,
    TokenAlignment,
    aggregate_embeddings,
    build_alignment,
    load_embeddings_binary,
    load_embeddings_jsonl,
    map_span_to_subwords,
    write_embeddings_binary,
    write_embeddings_jsonl,
)
from seglens.corpus import EntityMention
from seglens.errors import AlignmentError


class TestBuildAlignment:
    def test_specials_offset_ranges(self):
        align = build_alignment(["a", "b"], [["a"], ["b"]], specials=(1, 1))
        assert align.ranges == ((1, 2), (2, 3))
        assert align.n_positions == 4

    def test_cumulative_multi_piece(self):
        align = build_alignment(
            ["sodium", "sulfonate"],
            [["so", "##dium"], ["su", "##lf", "##ona", "##te"]],
        )
        assert align.ranges == ((0, 2), (2, 6))

    def test_nine_piece_fragment(self):
        # sodium | p oly sty rene | su lf ona te
        pieces = [["sodium"], ["p", "##oly", "##sty", "##rene"],
                  ["su", "##lf", "##ona", "##te"]]
        align = build_alignment(["sodium", "polystyrene", "sulfonate"], pieces)
        assert len(align.ranges) == 3
        assert sum(b - a for a, b in align.ranges) == 9

    def test_empty_piece_list_rejected(self):
        with pytest.raises(AlignmentError, match="no subword pieces"):
            build_alignment(["a", "b"], [["a"], []])

    def test_length_mismatch_rejected(self):
        with pytest.raises(AlignmentError):
            build_alignment(["a", "b"], [["a"]])


def table_for(rows, level="subword", sid="s"):
    return EmbeddingTable(level, {sid: np.asarray(rows, dtype=np.float32)})


class TestAggregate:
    def test_one_piece_per_word_is_identity_both_modes(self):
        align = build_alignment(["a", "b"], [["a"], ["b"]], specials=(1, 1))
        table = table_for([[9, 9], [1, 2], [3, 4], [9, 9]])
        for mode in ("sum", "average"):
            out = aggregate_embeddings(table, {"s": align}, mode)
            assert out.level == "word"
            np.testing.assert_array_equal(out.vectors["s"],
                                          np.asarray([[1, 2], [3, 4]], np.float32))

    def test_two_piece_arithmetic(self):
        align = build_alignment(["w"], [["w", "##x"]])
        table = table_for([[1, 2], [3, 4]])
        summed = aggregate_embeddings(table, {"s": align}, "sum")
        np.testing.assert_array_equal(summed.vectors["s"], [[4, 6]])
        avg = aggregate_embeddings(table, {"s": align}, "average")
        np.testing.assert_array_equal(avg.vectors["s"], [[2, 3]])

    def test_sum_equals_average_times_piece_count_brute_force(self):
        # independent recomputation of both modes with plain python loops
        rng = np.random.default_rng(5)
        for _ in range(50):
            n_words = int(rng.integers(1, 6))
            counts = [int(rng.integers(1, 5)) for _ in range(n_words)]
            lead, trail = int(rng.integers(0, 3)), int(rng.integers(0, 3))
            pieces = [["p"] * c for c in counts]
            align = build_alignment([f"w{i}" for i in range(n_words)], pieces,
                                    (lead, trail))
            total = lead + sum(counts) + trail
            dim = int(rng.integers(1, 7))
            mat = rng.standard_normal((total, dim)).astype(np.float32)
            table = EmbeddingTable("subword", {"s": mat})

            summed = aggregate_embeddings(table, {"s": align}, "sum").vectors["s"]
            averaged = aggregate_embeddings(table, {"s": align}, "average").vectors["s"]

            for w, (a, b) in enumerate(align.ranges):
                expect_sum = [0.0] * dim
                for row in range(a, b):
                    for d in range(dim):
                        expect_sum[d] += float(mat[row, d])
                expect_avg = [v / (b - a) for v in expect_sum]
                np.testing.assert_allclose(summed[w], expect_sum, rtol=1e-5)
                np.testing.assert_allclose(averaged[w], expect_avg, rtol=1e-5)
                np.testing.assert_allclose(
                    summed[w], np.asarray(averaged[w], np.float64) * counts[w], rtol=1e-5)

    def test_word_level_input_rejected(self):
        table = table_for([[1, 2]], level="word")
        align = build_alignment(["a"], [["a"]])
        with pytest.raises(AlignmentError, match="subword"):
            aggregate_embeddings(table, {"s": align}, "sum")

    def test_size_mismatch_rejected(self):
        align = build_alignment(["a"], [["a", "##b"]])
        table = table_for([[1, 2]])
        with pytest.raises(AlignmentError, match="positions"):
            aggregate_embeddings(table, {"s": align}, "sum")

    def test_dimension_preserved_one_row_per_word(self):
        rng = np.random.default_rng(0)
        pieces = [["a"], ["b", "##c"], ["d", "##e", "##f"]]
        align = build_alignment(["w0", "w1", "w2"], pieces, (1, 0))
        mat = rng.standard_normal((7, 16)).astype(np.float32)
        out = aggregate_embeddings(EmbeddingTable("subword", {"s": mat}), {"s": align}, "sum")
        assert out.vectors["s"].shape == (3, 16)


class TestSpanProjection:
    def test_boundary_words_map_to_first_pieces(self):
        align = TokenAlignment(((0, 2), (2, 5), (5, 9)))
        span = EntityMention("Drug", 0, 3)
        assert map_span_to_subwords(span, align) == (0, 5)

    def test_single_word_single_piece(self):
        align = build_alignment(["a", "b"], [["a"], ["b"]])
        assert map_span_to_subwords(EntityMention("Drug", 1, 2), align) == (1, 1)

    def test_all_single_piece_reduces_to_shifted_identity(self):
        align = build_alignment(["a", "b", "c"], [["a"], ["b"], ["c"]], specials=(2, 1))
        for start in range(3):
            for end in range(start + 1, 4):
                got = map_span_to_subwords(EntityMention("Drug", start, end), align)
                assert got == (start + 2, end - 1 + 2)

    def test_monotone_in_start_word(self):
        rng = np.random.default_rng(3)
        pieces = [["p"] * int(rng.integers(1, 4)) for _ in range(6)]
        align = build_alignment([f"w{i}" for i in range(6)], pieces, (1, 1))
        starts = [map_span_to_subwords(EntityMention("Drug", i, i + 1), align)[0]
                  for i in range(6)]
        assert starts == sorted(starts)
        assert len(set(starts)) == 6

    def test_out_of_range_rejected(self):
        align = build_alignment(["a"], [["a"]])
        with pytest.raises(AlignmentError):
            map_span_to_subwords(EntityMention("Drug", 0, 2), align)


class TestEmbeddingIO:
    def roundtrip_table(self):
        rng = np.random.default_rng(11)
        return EmbeddingTable("word", {
            "s0": rng.standard_normal((3, 4)).astype(np.float32),
            "s1": rng.standard_normal((5, 4)).astype(np.float32),
        })

    def test_jsonl_roundtrip(self, tmp_path):
        table = self.roundtrip_table()
        path = tmp_path / "emb.jsonl"
        write_embeddings_jsonl(table, path)
        loaded = load_embeddings_jsonl(path)
        assert loaded.level == "word"
        for sid in table.vectors:
            np.testing.assert_array_equal(loaded.vectors[sid], table.vectors[sid])

    def test_binary_roundtrip_bit_exact(self, tmp_path):
        table = self.roundtrip_table()
        write_embeddings_binary(table, tmp_path / "emb")
        loaded = load_embeddings_binary(tmp_path / "emb")
        assert loaded.level == "word"
        for sid in table.vectors:
            assert loaded.vectors[sid].tobytes() == table.vectors[sid].tobytes()

    def test_binary_header_is_sixteen_bytes(self, tmp_path):
        table = EmbeddingTable("subword", {"x": np.zeros((2, 3), np.float32)})
        write_embeddings_binary(table, tmp_path / "emb")
        blob = next((tmp_path / "emb").glob("*.emb")).read_bytes()
        assert len(blob) == 16 + 2 * 3 * 4
        assert blob[:4] == b"SGLE"

    def test_mixed_levels_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text(
            '{"id": "a", "level": "word", "vectors": [[1.0]]}\n'
            '{"id": "b", "level": "subword", "vectors": [[1.0]]}\n',
            encoding="utf-8",
        )
        with pytest.raises(AlignmentError, match="level"):
            load_embeddings_jsonl(path)

    def test_inconsistent_dimension_rejected(self):
        with pytest.raises(AlignmentError, match="dimension"):
            EmbeddingTable("word", {"a": np.zeros((1, 2), np.float32),
                                    "b": np.zeros((1, 3), np.float32)})
