import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stdialog import corpus as cp
from stdialog import text as tx
from stdialog.autodiff import Tensor


def make_sample(turn_words, tpp_turn_words=None):
    """Build a Sample from explicit word lists; last two turns get tpp words."""
    turns = [list(w) for w in turn_words]
    prev, cur = turns[-2], turns[-1]
    tpp = []
    for j, w in enumerate(prev):
        tpp.append(cp.TppWord(0, j, w, 0.1 * j, 0.1 * j + 0.05))
    for j, w in enumerate(cur):
        tpp.append(cp.TppWord(1, j, w, 0.2 * j, 0.2 * j + 0.1))
    return cp.Sample(dialog_id="d", target_turn_index=len(turns),
                     text_turns=turns,
                     speech_prev=np.zeros(50, np.float32),
                     speech_cur=np.zeros(50, np.float32),
                     tpp_words=tpp,
                     text_turn_lengths=(len(prev), len(cur)))


def vocab_for(words, tokenizer=None):
    tokenizer = tokenizer or tx.WhitespaceTokenizer()
    return tx.Vocab.from_tokens(tokenizer.vocabulary_tokens(words))


class TestVocab:
    def test_specials_first_and_distinct(self):
        v = vocab_for(["cat", "dog"])
        assert v.id_to_token[:4] == list(tx.SPECIALS)
        assert len(set(v.special_ids)) == 4

    def test_save_load_roundtrip(self, tmp_path):
        v = vocab_for(["alpha", "beta", "gamma"])
        path = tmp_path / "vocab.txt"
        v.save(path)
        loaded = tx.Vocab.load(path)
        assert loaded.id_to_token == v.id_to_token

    def test_rejects_missing_specials_header(self):
        with pytest.raises(tx.VocabError):
            tx.Vocab(["cat", "dog"])

    def test_oov_lookup_names_word(self):
        v = vocab_for(["cat"])
        with pytest.raises(tx.VocabError, match="zebra"):
            v.lookup("zebra")


class TestTokenizeSample:
    def test_two_turns_three_words_layout(self):
        sample = make_sample([["a", "b", "c"], ["d", "e", "f"]])
        v = vocab_for("abcdef")
        tok = tx.tokenize_sample(sample, v)
        assert tok.length == 9  # <s> a b c </s> d e f </s>
        assert tok.token_ids[0] == v.bos_id
        assert tok.token_ids[4] == v.eos_id
        assert tok.token_ids[-1] == v.eos_id
        np.testing.assert_array_equal(tok.segment_ids,
                                      [0, 0, 0, 0, 0, 1, 1, 1, 1])
        np.testing.assert_array_equal(tok.position_ids, np.arange(9))

    def test_eight_turns_eos_count(self):
        sample = make_sample([[f"t{i}"] for i in range(8)])
        v = vocab_for([f"t{i}" for i in range(8)])
        tok = tx.tokenize_sample(sample, v)
        assert (tok.token_ids == v.eos_id).sum() == 8
        assert (tok.token_ids == v.bos_id).sum() == 1

    def test_single_token_word_degenerate_span(self):
        sample = make_sample([["x"], ["y"]])
        v = vocab_for("xy")
        tok = tx.tokenize_sample(sample, v)
        for b in tok.word_boundaries:
            assert b.first_token_index == b.last_token_index

    def test_multi_token_words_span_correctly(self):
        tokenizer = tx.CharChunkTokenizer(2)
        sample = make_sample([["abcd", "ef"], ["ghijk"]])
        v = vocab_for(["abcd", "ef", "ghijk"], tokenizer)
        tok = tx.tokenize_sample(sample, v, tokenizer)
        # layout: <s> ab cd ef </s> gh ij k </s>
        assert tok.length == 9
        b0, b1, b2 = tok.word_boundaries
        assert (b0.first_token_index, b0.last_token_index) == (1, 2)
        assert (b1.first_token_index, b1.last_token_index) == (3, 3)
        assert (b2.first_token_index, b2.last_token_index) == (5, 7)
        assert b2.turn_flag == 1

    def test_boundaries_cover_exactly_tpp_words(self):
        sample = make_sample([["h1", "h2"], ["a", "b"], ["c", "d", "e"]])
        v = vocab_for(["h1", "h2", "a", "b", "c", "d", "e"])
        tok = tx.tokenize_sample(sample, v)
        assert len(tok.word_boundaries) == 5
        flags = [b.turn_flag for b in tok.word_boundaries]
        assert flags == [0, 0, 1, 1, 1]
        for b in tok.word_boundaries:
            assert 0 < b.first_token_index <= b.last_token_index < tok.length

    def test_oov_word_raises(self):
        sample = make_sample([["a"], ["zzz"]])
        v = vocab_for("a")
        with pytest.raises(tx.VocabError, match="zzz"):
            tx.tokenize_sample(sample, v)

    def test_truncation_drops_oldest_whole_turns(self):
        turns = [[f"h{i}a", f"h{i}b"] for i in range(6)] + [["p"], ["q"]]
        sample = make_sample(turns)
        words = [w for t in turns for w in t]
        v = vocab_for(words)
        full = tx.tokenize_sample(sample, v)
        capped = tx.tokenize_sample(sample, v, max_len=full.length - 1)
        assert capped.dropped_history_turns >= 1
        assert capped.length < full.length
        # last two turns intact
        assert capped.token_ids[-2] == v.lookup("q")

    def test_truncation_never_splits_last_two_turns(self):
        sample = make_sample([["a", "b", "c"], ["d", "e", "f"]])
        v = vocab_for("abcdef")
        with pytest.raises(ValueError, match="last two turns"):
            tx.tokenize_sample(sample, v, max_len=5)

    @settings(max_examples=30, deadline=None)
    @given(n_hist=st.integers(0, 6), prev=st.integers(1, 5),
           cur=st.integers(1, 5))
    def test_segment_one_count_property(self, n_hist, prev, cur):
        turns = [[f"x{i}"] for i in range(n_hist)]
        turns.append([f"p{j}" for j in range(prev)])
        turns.append([f"c{j}" for j in range(cur)])
        sample = make_sample(turns)
        v = vocab_for([w for t in turns for w in t])
        tok = tx.tokenize_sample(sample, v)
        # segment 1 exactly on tokens of the current turn plus final </s>
        assert int(tok.segment_ids.sum()) == cur + 1
        assert tok.segment_ids[-1] == 1


class TestEmbedText:
    def setup_method(self):
        self.sample = make_sample([["a", "b"], ["c"]])
        self.vocab = vocab_for("abc")
        self.tok = tx.tokenize_sample(self.sample, self.vocab)
        self.d = 6
        rng = np.random.default_rng(0)
        self.token_table = Tensor(rng.standard_normal((self.vocab.size, self.d)))
        self.pos_table = Tensor(rng.standard_normal((32, self.d)))
        self.seg_table = Tensor(rng.standard_normal((2, self.d)))

    def test_zero_tables_zero_output(self):
        z = Tensor(np.zeros((self.vocab.size, self.d)))
        zp = Tensor(np.zeros((32, self.d)))
        zs = Tensor(np.zeros((2, self.d)))
        out = tx.embed_text(self.tok, z, zp, zs)
        np.testing.assert_array_equal(out.data, np.zeros((self.tok.length, self.d)))

    def test_segment_difference_is_embedding_difference(self):
        out = tx.embed_text(self.tok, self.token_table, self.pos_table,
                            self.seg_table).data
        ids = self.tok.token_ids
        # rebuild a twin where one current-turn token is flipped to segment 0
        twin_seg = self.tok.segment_ids.copy()
        pos = int(np.flatnonzero(twin_seg == 1)[0])
        twin_seg[pos] = 0
        twin = tx.TokenizedInput(ids, twin_seg, self.tok.position_ids,
                                 self.tok.word_boundaries)
        out2 = tx.embed_text(twin, self.token_table, self.pos_table,
                             self.seg_table).data
        diff = out[pos] - out2[pos]
        expected = self.seg_table.data[1] - self.seg_table.data[0]
        np.testing.assert_allclose(diff, expected, atol=1e-12)

    def test_permuting_tokens_keeps_position_contribution(self):
        ids = self.tok.token_ids.copy()
        swapped = ids.copy()
        swapped[[1, 2]] = swapped[[2, 1]]
        twin = tx.TokenizedInput(swapped, self.tok.segment_ids,
                                 self.tok.position_ids, self.tok.word_boundaries)
        out = tx.embed_text(self.tok, self.token_table, self.pos_table,
                            self.seg_table).data
        out2 = tx.embed_text(twin, self.token_table, self.pos_table,
                             self.seg_table).data
        tok_contrib = self.token_table.data[ids]
        tok_contrib2 = self.token_table.data[swapped]
        np.testing.assert_allclose(out - tok_contrib, out2 - tok_contrib2,
                                   atol=1e-12)

    def test_over_limit_raises(self):
        with pytest.raises(ValueError, match="exceeds maximum"):
            tx.embed_text(self.tok, self.token_table, self.pos_table,
                          self.seg_table, max_len=3)


class TestMaskTokens:
    def big_tokenized(self, n_tokens=100_000, seed=0):
        rng = np.random.default_rng(seed)
        v = vocab_for([f"w{i}" for i in range(50)])
        ids = rng.integers(4, v.size, size=n_tokens)
        # sprinkle specials to prove they are never selected
        ids[::97] = v.eos_id
        ids[::101] = v.bos_id
        tok = tx.TokenizedInput(ids.astype(np.int64),
                                np.zeros(n_tokens, np.int64),
                                np.arange(n_tokens, dtype=np.int64), [])
        return tok, v

    def test_p_zero_empty_plan(self):
        tok, v = self.big_tokenized(1000)
        plan = tx.mask_tokens(tok, v, np.random.default_rng(0), p=0.0)
        assert plan.is_empty

    def test_masking_fraction_monte_carlo(self):
        tok, v = self.big_tokenized()
        plan = tx.mask_tokens(tok, v, np.random.default_rng(1), p=0.15)
        eligible = (~np.isin(tok.token_ids, v.special_ids)).sum()
        frac = len(plan.positions) / eligible
        assert abs(frac - 0.15) < 0.005

    def test_corruption_split_monte_carlo(self):
        tok, v = self.big_tokenized()
        plan = tx.mask_tokens(tok, v, np.random.default_rng(2), p=0.9)
        acts = plan.actions
        n = len(acts)
        assert abs((acts == tx.TextMaskPlan.MASK_TOKEN).sum() / n - 0.8) < 0.01
        assert abs((acts == tx.TextMaskPlan.RANDOM_TOKEN).sum() / n - 0.1) < 0.01
        assert abs((acts == tx.TextMaskPlan.KEEP).sum() / n - 0.1) < 0.01

    def test_specials_never_masked(self):
        tok, v = self.big_tokenized(10_000)
        plan = tx.mask_tokens(tok, v, np.random.default_rng(3), p=1.0)
        masked_ids = tok.token_ids[plan.positions]
        assert not np.isin(masked_ids, v.special_ids).any()

    def test_apply_respects_actions(self):
        tok, v = self.big_tokenized(2000)
        plan = tx.mask_tokens(tok, v, np.random.default_rng(4), p=0.5)
        corrupted = plan.apply(tok.token_ids, v)
        for pos, act, rep, label in zip(plan.positions, plan.actions,
                                        plan.replacement_ids, plan.labels):
            assert tok.token_ids[pos] == label
            if act == tx.TextMaskPlan.MASK_TOKEN:
                assert corrupted[pos] == v.mask_id
            elif act == tx.TextMaskPlan.RANDOM_TOKEN:
                assert corrupted[pos] == rep
            else:
                assert corrupted[pos] == label
        untouched = np.setdiff1d(np.arange(2000), plan.positions)
        np.testing.assert_array_equal(corrupted[untouched],
                                      tok.token_ids[untouched])

    def test_plan_deterministic_in_rng(self):
        tok, v = self.big_tokenized(5000)
        a = tx.mask_tokens(tok, v, np.random.default_rng(9))
        b = tx.mask_tokens(tok, v, np.random.default_rng(9))
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.replacement_ids, b.replacement_ids)
