import math

import numpy as np
import pytest

from stdialog import corpus as cp
from stdialog import objectives as ob
from stdialog.autodiff import Parameter, Tensor
from stdialog.encoders import FusedRepresentation
from stdialog.gradcheck import grad_check
from stdialog.masking import MaskPlan, AcousticMaskConfig, draw_mask_plan
from stdialog.text import TextMaskPlan, TokenBoundary

from oracles import cmam_oracle, cmlm_oracle, crs_oracle, tpp_oracle


def make_fused(n_text=6, m_prev=3, m_cur=4, d=8, seed=0):
    rng = np.random.default_rng(seed)
    length = n_text + m_prev + m_cur + 2
    hidden = Tensor(rng.standard_normal((length, d)))
    return FusedRepresentation(hidden=hidden, n_text=n_text, m_prev=m_prev,
                               m_cur=m_cur)


def make_head(d=8, seed=1, max_seconds=10.0):
    rng = np.random.default_rng(seed)
    registry = {}
    head = ob.init_tpp_head(registry, rng, d, max_seconds, dtype=np.float64)
    return head


class TestTppLoss:
    def test_exact_predictions_zero_loss(self):
        fused = make_fused()
        head = make_head()
        ps, pe, _, _ = ob.tpp_predictions(
            fused, [TokenBoundary(1, 2, 0.0, 0.0, 1)], head)
        boundary = TokenBoundary(1, 2, float(ps[0] * 10), float(pe[0] * 10), 1)
        loss = ob.tpp_loss(fused, [boundary], head)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_single_word(self):
        # one word, pred_start 0.30 vs target 0.25, pred_end 0.50 on target
        d = 4
        hidden = np.zeros((6, d))
        hidden[1] = [1.0, 0, 0, 0]
        hidden[2] = [0, 1.0, 0, 0]
        fused = FusedRepresentation(Tensor(hidden), n_text=4, m_prev=0,
                                    m_cur=0)
        w_start = Parameter(np.array([[0.30], [0], [0], [0]]), "ws")
        w_end = Parameter(np.array([[0], [0.50], [0], [0]]), "we")
        head = ob.TppHead(w_start, w_end, max_seconds=10.0)
        boundary = TokenBoundary(1, 2, 2.5, 5.0, 1)
        loss = ob.tpp_loss(fused, [boundary], head)
        assert loss.item() == pytest.approx(0.00125, abs=1e-12)

    def test_scalar_oracle_random_cases(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n_text = int(rng.integers(3, 9))
            fused = make_fused(n_text=n_text, seed=int(rng.integers(1e6)))
            head = make_head(seed=int(rng.integers(1e6)))
            n_words = int(rng.integers(1, n_text))
            boundaries = []
            for _ in range(n_words):
                first = int(rng.integers(0, n_text))
                last = int(rng.integers(first, n_text))
                s = float(rng.uniform(0, 5))
                boundaries.append(TokenBoundary(first, last, s,
                                                s + float(rng.uniform(0, 3)),
                                                int(rng.integers(0, 2))))
            loss = ob.tpp_loss(fused, boundaries, head).item()
            oracle = tpp_oracle(
                fused.hidden.data.tolist(),
                [(b.first_token_index, b.last_token_index, b.start_time,
                  b.end_time) for b in boundaries],
                head.w_start.data[:, 0].tolist(),
                head.w_end.data[:, 0].tolist(), 10.0, len(boundaries))
            assert abs(loss - oracle) < 1e-10

    def test_duplicating_words_leaves_loss_unchanged(self):
        fused = make_fused(seed=3)
        head = make_head(seed=4)
        boundaries = [TokenBoundary(0, 1, 0.5, 1.0, 0),
                      TokenBoundary(2, 3, 1.0, 2.0, 1)]
        single = ob.tpp_loss(fused, boundaries, head, normalizer=2).item()
        doubled = ob.tpp_loss(fused, boundaries * 2, head, normalizer=4).item()
        assert single == pytest.approx(doubled, abs=1e-12)

    def test_empty_boundaries_zero(self):
        assert ob.tpp_loss(make_fused(), [], make_head()).item() == 0.0

    def test_boundary_outside_text_span_raises(self):
        fused = make_fused(n_text=4)
        head = make_head()
        with pytest.raises(IndexError, match="text span"):
            ob.tpp_loss(fused, [TokenBoundary(2, 5, 0.1, 0.2, 1)], head)

    def test_gradients_match_finite_differences(self):
        fused_hidden = np.random.default_rng(5).standard_normal((10, 8))
        registry = {}
        head = ob.init_tpp_head(registry, np.random.default_rng(6), 8,
                                dtype=np.float64)
        boundaries = [TokenBoundary(1, 2, 0.4, 1.1, 0),
                      TokenBoundary(3, 3, 1.5, 2.0, 1)]

        def loss():
            fused = FusedRepresentation(Tensor(fused_hidden), 6, 1, 1)
            return ob.tpp_loss(fused, boundaries, head)

        report = grad_check(loss, list(registry.values()))
        assert report.max_relative_error < 1e-4


def corpus_dialogs(num=4, seed=0):
    cfg = cp.SyntheticConfig(num_dialogs=num, turns_per_dialog=(3, 5),
                             vocab_size=12, frame_rate=100, noise_std=0.02)
    return cp.generate_synthetic(cfg, seed=seed)


class TestMakeCrsSample:
    def test_positive_is_untouched_object(self):
        dialogs = corpus_dialogs()
        sample = cp.build_samples(dialogs[0], k=3)[0]
        out, label = ob.make_crs_sample(sample, dialogs,
                                        np.random.default_rng(0),
                                        class_probs=(1.0, 0.0, 0.0, 0.0))
        assert label == ob.CRS_POSITIVE
        assert out is sample

    def test_both_substituted_differs_and_drops_alignment(self):
        dialogs = corpus_dialogs()
        sample = cp.build_samples(dialogs[0], k=3)[0]
        out, label = ob.make_crs_sample(sample, dialogs,
                                        np.random.default_rng(1),
                                        class_probs=(0.0, 0.0, 0.0, 1.0))
        assert label == ob.CRS_BOTH_SUBSTITUTED
        assert out.text_turns[-1] != sample.text_turns[-1] or \
            not np.array_equal(out.speech_cur, sample.speech_cur)
        assert out.tpp_words == []
        assert out.cmam_turns == (False, False)
        # history turns and previous speech untouched
        assert out.text_turns[:-1] == sample.text_turns[:-1]
        np.testing.assert_array_equal(out.speech_prev, sample.speech_prev)

    def test_speech_substitution_keeps_prev_alignment(self):
        dialogs = corpus_dialogs()
        sample = cp.build_samples(dialogs[0], k=3)[0]
        out, label = ob.make_crs_sample(sample, dialogs,
                                        np.random.default_rng(2),
                                        class_probs=(0.0, 1.0, 0.0, 0.0))
        assert label == ob.CRS_SPEECH_SUBSTITUTED
        assert all(w.turn_flag == 0 for w in out.tpp_words)
        assert out.cmam_turns == (True, False)
        assert out.text_turns == sample.text_turns

    def test_text_substitution_updates_lengths(self):
        dialogs = corpus_dialogs()
        sample = cp.build_samples(dialogs[0], k=3)[0]
        out, label = ob.make_crs_sample(sample, dialogs,
                                        np.random.default_rng(3),
                                        class_probs=(0.0, 0.0, 1.0, 0.0))
        assert label == ob.CRS_TEXT_SUBSTITUTED
        assert out.text_turn_lengths[1] == len(out.text_turns[-1])
        assert out.cmam_turns == (True, True)
        np.testing.assert_array_equal(out.speech_cur, sample.speech_cur)

    def test_class_distribution_monte_carlo(self):
        dialogs = corpus_dialogs()
        sample = cp.build_samples(dialogs[0], k=3)[0]
        rng = np.random.default_rng(4)
        counts = np.zeros(4)
        trials = 100_000
        for _ in range(trials):
            _, label = ob.make_crs_sample(sample, dialogs, rng)
            counts[label] += 1
        np.testing.assert_allclose(counts / trials, [0.25] * 4, atol=0.01)

    def test_single_dialog_corpus_rejected(self):
        dialogs = corpus_dialogs(num=1)
        sample = cp.build_samples(dialogs[0], k=3)[0]
        with pytest.raises(ValueError, match="2 dialogs"):
            ob.make_crs_sample(sample, dialogs, np.random.default_rng(5),
                               class_probs=(0.0, 1.0, 0.0, 0.0))

    def test_substitutions_come_from_other_dialogs(self):
        dialogs = corpus_dialogs()
        own_words = {w.word for t in dialogs[0].turns for w in t.words}
        other_words = {w.word for d in dialogs[1:] for t in d.turns
                       for w in t.words}
        sample = cp.build_samples(dialogs[0], k=3)[0]
        rng = np.random.default_rng(6)
        for _ in range(50):
            out, _ = ob.make_crs_sample(sample, dialogs, rng,
                                        class_probs=(0.0, 0.0, 1.0, 0.0))
            assert set(out.text_turns[-1]) <= other_words | own_words


class TestCrsLoss:
    def test_uniform_logits_ln4(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 4)), "w")
        b = Parameter(np.zeros(4), "b")
        loss = ob.crs_loss(fused, 2, w, b)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_confident_correct_logit_lowers_loss(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 4)), "w")
        lo = ob.crs_loss(fused, 1, w, Parameter(
            np.array([0.0, 1.0, 0, 0]), "b1")).item()
        hi = ob.crs_loss(fused, 1, w, Parameter(
            np.array([0.0, 10.0, 0, 0]), "b2")).item()
        assert hi < lo < math.log(4)
        assert hi < 1e-3

    def test_scalar_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            fused = make_fused(seed=int(rng.integers(1e6)))
            w = Parameter(rng.standard_normal((8, 4)), "w")
            b = Parameter(rng.standard_normal(4), "b")
            label = int(rng.integers(0, 4))
            loss = ob.crs_loss(fused, label, w, b).item()
            oracle = crs_oracle(fused.hidden.data[0].tolist(),
                                w.data.tolist(), b.data.tolist(), label)
            assert abs(loss - oracle) < 1e-10

    def test_gradients(self):
        hidden = np.random.default_rng(8).standard_normal((10, 8))
        w = Parameter(np.random.default_rng(9).standard_normal((8, 4)), "w")
        b = Parameter(np.zeros(4), "b")

        def loss():
            fused = FusedRepresentation(Tensor(hidden), 6, 1, 1)
            return ob.crs_loss(fused, 3, w, b)

        assert grad_check(loss, [w, b]).max_relative_error < 1e-4


class TestCmlmLoss:
    def make_plan(self, positions, labels):
        positions = np.asarray(positions, dtype=np.int64)
        return TextMaskPlan(positions=positions,
                            actions=np.zeros(len(positions), np.int64),
                            replacement_ids=np.zeros(len(positions), np.int64),
                            labels=np.asarray(labels, dtype=np.int64))

    def test_empty_plan_zero(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 16)), "w")
        b = Parameter(np.zeros(16), "b")
        plan = self.make_plan([], [])
        assert ob.cmlm_loss(fused, plan, w, b).item() == 0.0

    def test_uniform_logits_ln16(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 16)), "w")
        b = Parameter(np.zeros(16), "b")
        plan = self.make_plan([1, 2], [5, 6])
        assert ob.cmlm_loss(fused, plan, w, b).item() == \
            pytest.approx(math.log(16), abs=1e-12)

    def test_scalar_oracle_five_tokens(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            fused = make_fused(seed=int(rng.integers(1e6)))
            w = Parameter(rng.standard_normal((8, 16)), "w")
            b = Parameter(rng.standard_normal(16), "b")
            plan = self.make_plan([0, 1, 2, 3, 4],
                                  rng.integers(0, 16, 5))
            loss = ob.cmlm_loss(fused, plan, w, b).item()
            states = fused.hidden.data[plan.positions].tolist()
            oracle = cmlm_oracle(states, w.data.tolist(), b.data.tolist(),
                                 plan.labels.tolist())
            assert abs(loss - oracle) < 1e-10

    def test_position_outside_text_span(self):
        fused = make_fused(n_text=4)
        w = Parameter(np.zeros((8, 16)), "w")
        b = Parameter(np.zeros(16), "b")
        with pytest.raises(IndexError):
            ob.cmlm_loss(fused, self.make_plan([5], [0]), w, b)


def plan_with_masked(length, masked_idx):
    mask = np.zeros(length, dtype=bool)
    mask[masked_idx] = True
    actions = np.where(mask, 0, -1)
    return MaskPlan(length=length, span_length=1, mask=mask,
                    actions=actions.astype(np.int64),
                    replacement_sources=np.full(length, -1, dtype=np.int64),
                    span_starts=list(masked_idx))


class TestCmamLoss:
    def test_perfect_reconstruction_zero(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 4)), "w")
        b = Parameter(np.full(4, 0.7), "b")
        plan = plan_with_masked(fused.m_prev, [0, 2])
        targets = np.full((2, 4), 0.7)
        loss = ob.cmam_loss(fused, plan, None, targets, None, w, b)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset_mae(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 4)), "w")
        b = Parameter(np.zeros(4), "b")
        plan = plan_with_masked(fused.m_cur, [1])
        targets = np.full((1, 4), 0.5)
        loss = ob.cmam_loss(fused, None, plan, None, targets, w, b)
        assert loss.item() == pytest.approx(0.5, abs=1e-12)

    def test_scalar_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            fused = make_fused(seed=int(rng.integers(1e6)))
            w = Parameter(rng.standard_normal((8, 5)), "w")
            b = Parameter(rng.standard_normal(5), "b")
            prev_masked = sorted(set(rng.integers(0, fused.m_prev,
                                                  2).tolist()))
            cur_masked = sorted(set(rng.integers(0, fused.m_cur, 2).tolist()))
            plan_p = plan_with_masked(fused.m_prev, prev_masked)
            plan_c = plan_with_masked(fused.m_cur, cur_masked)
            t_p = rng.standard_normal((len(prev_masked), 5))
            t_c = rng.standard_normal((len(cur_masked), 5))
            loss = ob.cmam_loss(fused, plan_p, plan_c, t_p, t_c, w, b).item()
            states = [fused.hidden.data[fused.prev_frame_index(j)].tolist()
                      for j in prev_masked]
            states += [fused.hidden.data[fused.cur_frame_index(j)].tolist()
                       for j in cur_masked]
            targets = t_p.tolist() + t_c.tolist()
            oracle = cmam_oracle(states, w.data.tolist(), b.data.tolist(),
                                 targets)
            assert abs(loss - oracle) < 1e-10

    def test_plan_length_mismatch_raises(self):
        fused = make_fused(m_prev=3)
        w = Parameter(np.zeros((8, 4)), "w")
        b = Parameter(np.zeros(4), "b")
        plan = plan_with_masked(7, [0])
        with pytest.raises(IndexError, match="fused"):
            ob.cmam_loss(fused, plan, None, np.zeros((1, 4)), None, w, b)

    def test_no_masked_frames_zero(self):
        fused = make_fused()
        w = Parameter(np.zeros((8, 4)), "w")
        b = Parameter(np.zeros(4), "b")
        plan = plan_with_masked(fused.m_prev, [])
        loss = ob.cmam_loss(fused, plan, None, np.zeros((0, 4)), None, w, b)
        assert loss.item() == 0.0


class TestJointLoss:
    def consts(self, *values):
        return [Tensor(np.asarray(v, dtype=np.float64)) for v in values]

    def test_unit_alpha_sums(self):
        tpp, crs, cmlm, cmam = self.consts(0.1, 0.2, 0.3, 0.4)
        total = ob.joint_loss(tpp, crs, cmlm, cmam, ob.LossWeights(alpha=1.0))
        assert total.item() == pytest.approx(1.0, abs=1e-12)

    def test_alpha_zero_excludes_alignment_term(self):
        tpp, crs, cmlm, cmam = self.consts(123.0, 0.2, 0.3, 0.4)
        total = ob.joint_loss(tpp, crs, cmlm, cmam, ob.LossWeights(alpha=0.0))
        assert total.item() == pytest.approx(0.9, abs=1e-12)

    def test_alpha_two_doubles_alignment_only(self):
        tpp, crs, cmlm, cmam = self.consts(0.1, 0.2, 0.3, 0.4)
        total = ob.joint_loss(tpp, crs, cmlm, cmam, ob.LossWeights(alpha=2.0))
        assert total.item() == pytest.approx(1.1, abs=1e-12)

    def test_crs_disabled(self):
        tpp, _, cmlm, cmam = self.consts(0.1, 0.2, 0.3, 0.4)
        total = ob.joint_loss(tpp, None, cmlm, cmam, ob.LossWeights())
        assert total.item() == pytest.approx(0.8, abs=1e-12)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            ob.LossWeights(alpha=-0.5)
