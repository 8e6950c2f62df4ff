import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seglens.corpus import Corpus
from seglens.errors import VocabError
from seglens.wordpiece import (
    ExternalTokenization,
    WordPieceTokenizer,
    detokenize,
    ingest_external_tokenization,
    load_vocab,
    make_vocab,
    normalize_word,
    tokenize_word,
    word_pieces,
)

from conftest import sent


class TestLoadVocab:
    def test_three_line_file(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("[UNK]\na\n##b\n", encoding="utf-8")
        vocab = load_vocab(path)
        assert len(vocab) == 3
        assert vocab.index == {"[UNK]": 0, "a": 1, "##b": 2}

    def test_duplicate_line_named(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("[UNK]\na\na\n", encoding="utf-8")
        with pytest.raises(VocabError, match="'a'"):
            load_vocab(path)

    def test_missing_unk_token(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a\nb\n", encoding="utf-8")
        with pytest.raises(VocabError, match=r"\[UNK\]"):
            load_vocab(path)


class TestNormalizeWord:
    def test_cased_identity(self):
        assert normalize_word("Naproxen", "cased") == "Naproxen"

    def test_uncased_lowercases(self):
        assert normalize_word("Naproxen", "uncased") == "naproxen"

    def test_uncased_strips_accents(self):
        assert normalize_word("café", "uncased") == "cafe"

    def test_unknown_mode_rejected(self):
        with pytest.raises(VocabError):
            normalize_word("x", "titlecase")


SULF_VOCAB = make_vocab([
    "[UNK]", "su", "##lf", "##ona", "##te", "sodium", "p", "##oly", "##sty",
    "##rene", "aspirin", "x",
])


class TestTokenizeWord:
    def test_whole_word_in_vocab(self):
        assert tokenize_word("aspirin", SULF_VOCAB) == ["aspirin"]

    def test_greedy_multi_piece_split(self):
        assert tokenize_word("sulfonate", SULF_VOCAB) == ["su", "##lf", "##ona", "##te"]
        assert tokenize_word("polystyrene", SULF_VOCAB) == ["p", "##oly", "##sty", "##rene"]

    def test_unmatchable_position_collapses_to_unk(self):
        vocab = make_vocab(["[UNK]", "x"])
        assert tokenize_word("xq", vocab) == ["[UNK]"]

    def test_over_long_word_collapses_to_unk(self):
        vocab = make_vocab(["[UNK]", "a", "##a"], max_chars_per_word=4)
        assert tokenize_word("aaaaa", vocab) == ["[UNK]"]
        assert tokenize_word("aaaa", vocab) == ["a", "##a", "##a", "##a"]

    def test_empty_word_rejected(self):
        with pytest.raises(VocabError):
            tokenize_word("", SULF_VOCAB)

    def test_first_piece_is_longest_vocabulary_prefix(self):
        # direct enumeration oracle on a small vocabulary
        vocab = make_vocab(["[UNK]", "s", "su", "sul", "##f", "##fo", "##onate",
                            "##fonate"])
        word = "sulfonate"
        pieces = tokenize_word(word, vocab)
        longest = max(
            (p for p in vocab.entries
             if not p.startswith("##") and p != "[UNK]" and word.startswith(p)),
            key=len,
        )
        assert pieces[0] == longest == "sul"
        assert pieces == ["sul", "##fonate"]


class TestDetokenize:
    def test_inverts_multi_piece_split(self):
        assert detokenize(["su", "##lf", "##ona", "##te"], SULF_VOCAB) == "sulfonate"

    def test_identity_single_piece(self):
        assert detokenize(["aspirin"], SULF_VOCAB) == "aspirin"

    def test_leading_continuation_rejected(self):
        with pytest.raises(VocabError, match="##lf"):
            detokenize(["##lf", "##ona"], SULF_VOCAB)

    def test_empty_list_rejected(self):
        with pytest.raises(VocabError):
            detokenize([], SULF_VOCAB)


@st.composite
def vocab_and_word(draw):
    alphabet = "abcd"
    pieces = draw(st.lists(st.text(alphabet, min_size=1, max_size=3),
                           min_size=1, max_size=8, unique=True))
    entries = ["[UNK]"] + pieces + ["##" + p for p in pieces]
    word = draw(st.text(alphabet, min_size=1, max_size=12))
    return make_vocab(dict.fromkeys(entries)), word


class TestProperties:
    @given(vocab_and_word())
    @settings(max_examples=300, deadline=None)
    def test_round_trip_and_length_conservation(self, case):
        vocab, word = case
        pieces = tokenize_word(word, vocab)
        if pieces == [vocab.unk_token]:
            return
        assert detokenize(pieces, vocab) == word
        stripped = [pieces[0]] + [p.removeprefix("##") for p in pieces[1:]]
        assert sum(len(p) for p in stripped) == len(word)

    @given(vocab_and_word())
    @settings(max_examples=100, deadline=None)
    def test_deterministic(self, case):
        vocab, word = case
        assert tokenize_word(word, vocab) == tokenize_word(word, vocab)

    @given(vocab_and_word())
    @settings(max_examples=200, deadline=None)
    def test_greedy_first_piece(self, case):
        vocab, word = case
        pieces = tokenize_word(word, vocab)
        if pieces == [vocab.unk_token]:
            return
        prefixes = [p for p in vocab.entries
                    if p != vocab.unk_token and not p.startswith("##")
                    and word.startswith(p)]
        assert pieces[0] == max(prefixes, key=len)


class TestWordPieceTokenizer:
    def test_uncased_mode_normalizes_before_matching(self):
        vocab = make_vocab(["[UNK]", "naproxen"])
        tok = WordPieceTokenizer(vocab, "uncased")
        assert tok.tokenize_word("Naproxen") == ["naproxen"]
        assert WordPieceTokenizer(vocab, "cased").tokenize_word("Naproxen") == ["[UNK]"]

    def test_combining_marks_only_word_is_unk(self):
        vocab = make_vocab(["[UNK]", "a"])
        tok = WordPieceTokenizer(vocab, "uncased")
        assert tok.tokenize_word("́") == ["[UNK]"]


class TestExternalTokenization:
    def corpus(self):
        return Corpus((sent("s0", ["sodium", "sulfonate"]), sent("s1", ["ok"])))

    def test_aligned_file_accepted(self, tmp_path):
        path = tmp_path / "tok.json"
        path.write_text(json.dumps([
            {"id": "s0", "pieces": [["sodium"], ["su", "##lf", "##ona", "##te"]]},
            {"id": "s1", "pieces": [["ok"]]},
        ]), encoding="utf-8")
        ext = ingest_external_tokenization(path, self.corpus())
        assert ext.pieces["s0"][1] == ("su", "##lf", "##ona", "##te")

    def test_word_count_mismatch_names_sentence(self, tmp_path):
        path = tmp_path / "tok.json"
        path.write_text(json.dumps([
            {"id": "s0", "pieces": [["sodium"]]},
        ]), encoding="utf-8")
        with pytest.raises(VocabError, match="s0"):
            ingest_external_tokenization(path, self.corpus())

    def test_empty_piece_list_rejected(self, tmp_path):
        path = tmp_path / "tok.json"
        path.write_text(json.dumps([
            {"id": "s0", "pieces": [["sodium"], []]},
        ]), encoding="utf-8")
        with pytest.raises(VocabError, match="empty piece list"):
            ingest_external_tokenization(path, self.corpus())

    def test_word_pieces_adapter_dispatch(self):
        corpus = self.corpus()
        ext = ExternalTokenization({"s0": (("sodium",), ("su", "##lfonate")),
                                    "s1": (("ok",),)})
        assert word_pieces(ext, corpus["s0"]) == [["sodium"], ["su", "##lfonate"]]
        assert word_pieces(SULF_VOCAB, corpus["s0"])[0] == ["sodium"]
        with pytest.raises(VocabError, match="no external tokenization"):
            word_pieces(ExternalTokenization({}), corpus["s0"])
