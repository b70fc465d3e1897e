import math

import numpy as np
import pytest

from trrg import autograd as ag
from trrg.autograd import ContractError, Tensor
from trrg.config import ModelConfig
from trrg.corpus import generate_corpus, Vocabulary
from trrg.nn import Adam
from trrg.pretrain import (
    ContrastiveBatch,
    PretrainModel,
    contrastive_loss,
    infonce_t2v,
    infonce_v2t,
    pretrain_step,
    similarity,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def micro_config(**overrides):
    base = dict(
        d=16, d_llm=16, heads=2, image_size=16, patch_size=8, encoder_depth=1,
        decoder_depth=1, query_len=2, k=1, vocab_size=30, max_text_len=16, seed=3,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()


class TestSimilarity:
    def test_self_similarity_is_one(self):
        x = Tensor(rng(1).normal(size=(1, 8)))
        assert similarity(x, x).item() == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_is_zero(self):
        a = Tensor([[1.0, 0.0]])
        b = Tensor([[0.0, 2.0]])
        assert similarity(a, b).item() == pytest.approx(0.0, abs=1e-7)

    def test_negation_is_minus_one(self):
        x = Tensor(rng(2).normal(size=(1, 8)))
        minus = Tensor(-x.data)
        assert similarity(x, minus).item() == pytest.approx(-1.0, abs=1e-6)

    def test_zero_vector_rejected(self):
        with pytest.raises(ContractError):
            similarity(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]))


def orthogonal_pairs_batch(tau=1.0):
    image = Tensor([[1.0, 0.0], [0.0, 1.0]])
    text = Tensor([[1.0, 0.0], [0.0, 1.0]])
    return ContrastiveBatch(image=image, text=text, tau=tau)


class TestInfoNCE:
    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_identical_embeddings_give_log_n(self, n):
        emb = Tensor(np.tile(rng(3).normal(size=(1, 6)), (n, 1)))
        batch = ContrastiveBatch(image=emb, text=Tensor(emb.data.copy()), tau=0.07)
        assert infonce_v2t(batch).item() == pytest.approx(math.log(n), abs=1e-6)
        assert infonce_t2v(batch).item() == pytest.approx(math.log(n), abs=1e-6)

    def test_two_orthogonal_pairs_hand_value(self):
        batch = orthogonal_pairs_batch(tau=1.0)
        expected = -math.log(math.e / (math.e + 1.0))
        assert infonce_v2t(batch).item() == pytest.approx(expected, abs=1e-4)
        assert infonce_t2v(batch).item() == pytest.approx(expected, abs=1e-4)
        assert expected == pytest.approx(0.3133, abs=1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_nonnegative(self, seed):
        image = Tensor(rng(seed).normal(size=(4, 8)))
        text = Tensor(rng(seed + 100).normal(size=(4, 8)))
        batch = ContrastiveBatch(image=image, text=text, tau=0.5)
        assert infonce_v2t(batch).item() >= 0.0
        assert infonce_t2v(batch).item() >= 0.0

    def test_symmetric_batch_directions_agree(self):
        emb = rng(7).normal(size=(5, 8))
        batch = ContrastiveBatch(image=Tensor(emb), text=Tensor(emb.copy()), tau=0.3)
        assert infonce_v2t(batch).item() == pytest.approx(infonce_t2v(batch).item(), abs=1e-6)

    def test_matches_double_loop_oracle(self):
        image = rng(8).normal(size=(5, 6))
        text = rng(9).normal(size=(5, 6))
        tau = 0.2
        batch = ContrastiveBatch(image=Tensor(image), text=Tensor(text), tau=tau)

        def cos(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        v2t = 0.0
        t2v = 0.0
        for i in range(5):
            num = math.exp(cos(text[i], image[i]) / tau)
            den = sum(math.exp(cos(text[i], image[j]) / tau) for j in range(5))
            v2t += -math.log(num / den)
            num = math.exp(cos(image[i], text[i]) / tau)
            den = sum(math.exp(cos(image[i], text[j]) / tau) for j in range(5))
            t2v += -math.log(num / den)
        assert infonce_v2t(batch).item() == pytest.approx(v2t / 5, abs=1e-5)
        assert infonce_t2v(batch).item() == pytest.approx(t2v / 5, abs=1e-5)

    def test_total_is_exact_sum_of_directions(self):
        image = Tensor(rng(10).normal(size=(4, 8)))
        text = Tensor(rng(11).normal(size=(4, 8)))
        batch = ContrastiveBatch(image=image, text=text, tau=0.07)
        total = contrastive_loss(batch).item()
        parts = infonce_v2t(batch).item() + infonce_t2v(batch).item()
        assert total == pytest.approx(parts, abs=1e-6)

    def test_invariant_to_common_positive_rescaling(self):
        image = rng(12).normal(size=(4, 8))
        text = rng(13).normal(size=(4, 8))
        a = ContrastiveBatch(image=Tensor(image), text=Tensor(text), tau=0.1)
        b = ContrastiveBatch(image=Tensor(image * 7.5), text=Tensor(text * 0.3), tau=0.1)
        assert contrastive_loss(a).item() == pytest.approx(
            contrastive_loss(b).item(), abs=1e-4
        )

    def test_tau_must_be_positive(self):
        with pytest.raises(ContractError):
            ContrastiveBatch(image=Tensor(np.ones((2, 4))), text=Tensor(np.ones((2, 4))), tau=0.0)

    def test_batch_needs_two_pairs(self):
        with pytest.raises(ContractError):
            ContrastiveBatch(image=Tensor(np.ones((1, 4))), text=Tensor(np.ones((1, 4))))

    def test_gradient_passes_grad_check_on_2x4_batch(self):
        text = Tensor(rng(14).normal(size=(2, 4)))

        def loss(x):
            return contrastive_loss(ContrastiveBatch(image=x, text=text, tau=1.0))

        assert ag.grad_check(loss, Tensor(rng(15).normal(size=(2, 4)))) < 1e-3


def tiny_corpus(count, seed):
    studies = generate_corpus(count, seed=seed)
    for s in studies:
        s.pixels = s.pixels[:16, :16]
    return studies


class TestPretrainStep:
    def test_loss_near_log_n_at_random_init(self):
        # each direction starts near ln N at unit temperature; the stage
        # loss totals the two directions
        losses = []
        for seed in range(20):
            config = micro_config(seed=seed)
            studies = tiny_corpus(8, seed=seed + 500)
            vocab = Vocabulary.build([s.report for s in studies])
            config = config.replace(vocab_size=len(vocab))
            model = PretrainModel(config, rng(seed))
            opt = Adam(model.trainable_parameters(), lr=config.lr)
            loss = pretrain_step(studies, model, vocab, opt, rng(seed + 1), tau=1.0)
            losses.append(loss / 2.0)
        assert all(math.log(8) - 1 <= v <= math.log(8) + 1 for v in losses)

    def test_training_reduces_loss(self):
        studies = tiny_corpus(64, seed=600)
        vocab = Vocabulary.build([s.report for s in studies])
        config = micro_config(vocab_size=len(vocab), lr=1e-3)
        model = PretrainModel(config, rng(0))
        opt = Adam(model.trainable_parameters(), lr=config.lr)
        sample_rng = rng(1)
        first = None
        for step in range(200):
            batch = [studies[i] for i in sample_rng.permutation(64)[:8]]
            loss = pretrain_step(batch, model, vocab, opt, sample_rng, tau=config.tau)
            if first is None:
                first = loss
        assert loss < first

    def test_rejects_single_study_batch(self):
        studies = tiny_corpus(1, seed=700)
        vocab = Vocabulary.build([s.report for s in studies])
        config = micro_config(vocab_size=len(vocab))
        model = PretrainModel(config, rng(0))
        opt = Adam(model.trainable_parameters(), lr=1e-3)
        with pytest.raises(ContractError):
            pretrain_step(studies, model, vocab, opt, rng(1))

    def test_gradient_of_stage_loss_wrt_encoder_params(self):
        studies = tiny_corpus(2, seed=800)
        vocab = Vocabulary.build([s.report for s in studies])
        config = micro_config(vocab_size=len(vocab))
        model = PretrainModel(config, rng(2))
        from trrg.pretrain import encode_batch

        def loss(_param):
            batch = encode_batch(model, studies, vocab, rng(42), tau=1.0)
            return contrastive_loss(batch)

        err = ag.grad_check(loss, model.vision.patch_proj.w)
        assert err < 1e-3
        err = ag.grad_check(loss, model.text.tok.table)
        assert err < 1e-3
