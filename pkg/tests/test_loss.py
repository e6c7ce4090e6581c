import math

import pytest
import torch

from one2set.assignment import AssignedTargets, Assignment
from one2set.corpus import (
    EOS_ID,
    NULL_ID,
    NULL_TARGET,
    PAD_ID,
    RESERVED_TOKENS,
    KeyphraseTarget,
    Vocabulary,
    encode_document,
)
from one2set.loss import (
    LossConfig,
    one2seq_loss,
    pack_targets,
    set_loss,
    step_weights,
    weighted_nll,
)
from one2set.model import ModelConfig, SetTransformer

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon"]


def make_vocab():
    return Vocabulary(list(RESERVED_TOKENS) + WORDS)


def make_model(seed=0, num_codes=4, double=False):
    torch.manual_seed(seed)
    model = SetTransformer(ModelConfig(
        vocab_size=len(make_vocab()), layers=1, heads=2, model_dim=16,
        feedforward_dim=32, embed_dim=16, num_codes=num_codes,
        max_phrase_len=6, dropout=0.0, max_source_len=32,
    ))
    if double:
        model = model.double()
    model.eval()
    return model


def phrase(*ids):
    return KeyphraseTarget(ids=tuple(ids) + (EOS_ID,), tokens=("t",) * len(ids))


def assigned(per_code):
    dummy = Assignment(code_for_slot=tuple(range(len(per_code) // 2)), total_cost=0.0)
    return AssignedTargets(per_code=tuple(per_code), present_assignment=dummy,
                           absent_assignment=dummy)


class TestLossConfig:
    def test_lambda_range(self):
        with pytest.raises(ValueError):
            LossConfig(lambda_pre=1.5)

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            LossConfig(mode="joint")

    def test_forcing_validation(self):
        with pytest.raises(ValueError):
            LossConfig(forcing="free")


class TestWeightedNll:
    def test_hand_case(self):
        # one code, target [w, EOS], probs 0.5 and 0.25 -> -(ln.5 + ln.25)
        w = 8
        dists = torch.zeros(1, 1, 2, 16)
        dists[0, 0, 0, w] = 0.5
        dists[0, 0, 1, EOS_ID] = 0.25
        targets = torch.tensor([[[w, EOS_ID]]])
        weights = torch.ones(1, 1, 2)
        loss = weighted_nll(dists, targets, weights)
        assert float(loss) == pytest.approx(-(math.log(0.5) + math.log(0.25)), abs=1e-6)
        assert float(loss) == pytest.approx(2.0794, abs=1e-4)

    def test_uniform_predictions_closed_form(self):
        # uniform over V, length L -> L * ln V
        v, length = 16, 5
        dists = torch.full((1, 1, length, v), 1.0 / v)
        targets = torch.randint(0, v, (1, 1, length))
        weights = torch.ones(1, 1, length)
        assert float(weighted_nll(dists, targets, weights)) == pytest.approx(
            length * math.log(v), abs=1e-5
        )

    def test_perfect_predictions_zero_loss(self):
        targets = torch.tensor([[[8, EOS_ID]]])
        dists = torch.zeros(1, 1, 2, 16)
        dists[0, 0, 0, 8] = 1.0
        dists[0, 0, 1, EOS_ID] = 1.0
        weights = torch.ones(1, 1, 2)
        assert float(weighted_nll(dists, targets, weights)) == pytest.approx(0.0, abs=1e-9)


class TestStepWeights:
    def test_null_and_pad_weighting(self):
        targets = torch.tensor([[[8, EOS_ID], [NULL_ID, PAD_ID],
                                 [9, EOS_ID], [NULL_ID, PAD_ID]]])
        weights = step_weights(targets, half=2, lambda_pre=0.2, lambda_abs=0.1)
        assert weights[0, 0].tolist() == [1.0, 1.0]
        assert weights[0, 1].tolist() == [pytest.approx(0.2), 0.0]
        assert weights[0, 3].tolist() == [pytest.approx(0.1), 0.0]

    def test_single_mode_one_lambda(self):
        targets = torch.tensor([[[NULL_ID], [NULL_ID]]])
        weights = step_weights(targets, half=1, lambda_pre=0.3, lambda_abs=0.9,
                               single=True)
        assert weights[0, 0, 0] == pytest.approx(0.3)
        assert weights[0, 1, 0] == pytest.approx(0.3)


class TestSetLoss:
    def _doc(self):
        return encode_document(["alpha", "beta", "gamma"], make_vocab())

    def test_all_null_lambda_zero_is_exactly_zero(self):
        model = make_model()
        targets = assigned([NULL_TARGET] * 4)
        cfg = LossConfig(lambda_pre=0.0, lambda_abs=0.0)
        out = set_loss(model, [self._doc()], [targets], cfg)
        assert float(out.total) == 0.0

    def test_lambda_one_equals_unweighted(self):
        model = make_model(double=True)
        targets = assigned([phrase(8), NULL_TARGET, phrase(9), NULL_TARGET])
        cfg = LossConfig(lambda_pre=1.0, lambda_abs=1.0)
        out = set_loss(model, [self._doc()], [targets], cfg)

        packed = pack_targets([targets])
        from one2set.loss import _teacher_forced_dists

        dists = _teacher_forced_dists(model, [self._doc()], packed)
        weights = torch.ones_like(packed, dtype=dists.dtype)
        weights[packed == PAD_ID] = 0.0
        expected = weighted_nll(dists, packed, weights)
        assert float(out.total) == pytest.approx(float(expected), abs=1e-6)

    def test_decomposition_into_halves(self):
        model = make_model(double=True)
        targets = assigned([phrase(8), phrase(9), NULL_TARGET, phrase(10)])
        cfg = LossConfig()
        out = set_loss(model, [self._doc()], [targets], cfg)
        assert float(out.total) == pytest.approx(
            float(out.present_half) + float(out.absent_half), abs=1e-6
        )

    def test_halves_computable_in_isolation(self):
        # the present-half term must not depend on the absent half at all
        model = make_model()
        doc = self._doc()
        cfg = LossConfig()
        a = set_loss(model, [doc], [assigned([phrase(8), NULL_TARGET,
                                              phrase(9), NULL_TARGET])], cfg)
        b = set_loss(model, [doc], [assigned([phrase(8), NULL_TARGET,
                                              NULL_TARGET, phrase(10)])], cfg)
        assert float(a.present_half) == pytest.approx(float(b.present_half), abs=1e-9)

    def test_lambda_zero_equals_null_deleted_loss(self):
        model = make_model(double=True)
        doc = self._doc()
        targets = assigned([phrase(8), NULL_TARGET, phrase(9), NULL_TARGET])
        cfg = LossConfig(lambda_pre=0.0, lambda_abs=0.0)
        out = set_loss(model, [doc], [targets], cfg)

        packed = pack_targets([targets])
        from one2set.loss import _teacher_forced_dists

        dists = _teacher_forced_dists(model, [doc], packed)
        manual = 0.0
        for code in (0, 2):  # the non-null codes
            for t, token in enumerate(packed[0, code]):
                if token == PAD_ID:
                    continue
                manual -= math.log(float(dists[0, code, t, token]))
        assert float(out.total) == pytest.approx(manual, abs=1e-6)

    def test_monotone_in_lambda(self):
        model = make_model()
        doc = self._doc()
        targets = assigned([phrase(8), NULL_TARGET, NULL_TARGET, NULL_TARGET])
        losses = []
        for lam in (0.0, 0.1, 0.5, 1.0):
            cfg = LossConfig(lambda_pre=lam, lambda_abs=lam)
            losses.append(float(set_loss(model, [doc], [targets], cfg).total))
        assert all(b >= a - 1e-9 for a, b in zip(losses, losses[1:]))

    def test_null_ratios_reported(self):
        model = make_model()
        targets = assigned([phrase(8), NULL_TARGET, NULL_TARGET, NULL_TARGET])
        out = set_loss(model, [self._doc()], [targets], LossConfig())
        assert out.null_ratio_present == pytest.approx(0.5)
        assert out.null_ratio_absent == pytest.approx(1.0)

    def test_student_forcing_runs_and_differs(self):
        model = make_model()
        doc = self._doc()
        targets = assigned([phrase(8), NULL_TARGET, phrase(9), NULL_TARGET])
        teacher = set_loss(model, [doc], [targets], LossConfig())
        student = set_loss(model, [doc], [targets], LossConfig(forcing="student"))
        assert float(student.total) > 0
        # same formula over different (self-fed) distributions
        assert float(student.total) != pytest.approx(float(teacher.total), abs=1e-9)

    def test_gradients_flow(self):
        model = make_model()
        model.train()
        targets = assigned([phrase(8), NULL_TARGET, phrase(9), NULL_TARGET])
        out = set_loss(model, [self._doc()], [targets], LossConfig())
        out.total.backward()
        grads = [p.grad for p in model.parameters() if p.grad is not None]
        assert grads and any(float(g.abs().sum()) > 0 for g in grads)


class TestOne2SeqLoss:
    def test_runs_and_positive(self):
        model = make_model(num_codes=2)
        with torch.no_grad():
            model.code_emb.weight.zero_()
        doc = encode_document(["alpha", "beta"], make_vocab())
        seq = [8, 5, 9, EOS_ID]  # phrase sep phrase eos
        loss = one2seq_loss(model, [doc], [seq])
        assert float(loss) > 0

    def test_single_phrase_reduces_to_per_phrase_nll(self):
        model = make_model(num_codes=2)
        with torch.no_grad():
            model.code_emb.weight.zero_()
        doc = encode_document(["alpha", "beta"], make_vocab())
        seq = [8, EOS_ID]
        loss = one2seq_loss(model, [doc], [seq])

        targets = torch.tensor([[[8, EOS_ID]]])
        from one2set.loss import _teacher_forced_dists

        dists = _teacher_forced_dists(model, [doc], targets, codes=[0])
        manual = -float(
            dists[0, 0, 0, 8].log() + dists[0, 0, 1, EOS_ID].log()
        )
        assert float(loss) == pytest.approx(manual, abs=1e-6)
