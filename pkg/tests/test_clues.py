import logging

import numpy as np
import pytest

from trrg import autograd as ag
from trrg.autograd import ContractError, ShapeError, Tensor
from trrg.clues import (
    ClueBank,
    CluePrompt,
    build_prompts,
    clue_weights,
    encode_clue_bank,
    inject_clues,
    select_topk,
    topk_indices,
    weight_clues,
)
from trrg.corpus import DiseaseCatalog, Vocabulary, generate_corpus
from trrg.encoders import TextEncoder


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture(scope="module")
def vocab():
    studies = generate_corpus(40, seed=5)
    catalog = DiseaseCatalog()
    prompt_texts = [
        CluePrompt(d, s, loc).rendered
        for d in catalog.diseases
        for s in (None, "severe")
        for loc in (None, "left lower lobe")
    ]
    return Vocabulary.build([s.report for s in studies] + prompt_texts + ["clue :"])


@pytest.fixture(scope="module")
def encoder(vocab):
    return TextEncoder(vocab_size=len(vocab), max_len=16, d=64, heads=4, depth=2, rng=rng(7))


def fresh_bank(encoder, vocab, r=8, seed=11):
    prompts = build_prompts(DiseaseCatalog(), rng(seed))
    return encode_clue_bank(prompts, encoder, vocab, r)


class TestPrompts:
    def test_full_template(self):
        prompt = CluePrompt("pneumonia", "severe", "left lower lobe")
        assert prompt.rendered == "Clue: severe pneumonia at left lower lobe"

    def test_elision_of_absent_slots(self):
        assert CluePrompt("pneumonia", None, None).rendered == "Clue: pneumonia"
        assert CluePrompt("edema", "mild", None).rendered == "Clue: mild edema"
        assert CluePrompt("mass", None, "right lung").rendered == "Clue: mass at right lung"

    def test_one_prompt_per_disease(self):
        prompts = build_prompts(DiseaseCatalog(), rng(1))
        assert [p.disease for p in prompts] == list(DiseaseCatalog().diseases)

    def test_same_seed_same_prompts(self):
        a = build_prompts(DiseaseCatalog(), rng(3))
        b = build_prompts(DiseaseCatalog(), rng(3))
        assert [p.rendered for p in a] == [p.rendered for p in b]

    def test_resampling_varies_across_epochs(self):
        epoch_rng = rng(4)
        a = build_prompts(DiseaseCatalog(), epoch_rng)
        b = build_prompts(DiseaseCatalog(), epoch_rng)
        assert [p.rendered for p in a] != [p.rendered for p in b]

    def test_samples_per_disease_must_be_positive(self):
        with pytest.raises(ContractError):
            build_prompts(DiseaseCatalog(), rng(5), samples_per_disease=0)


class TestBankEncoding:
    def test_bank_shapes(self, encoder, vocab):
        bank = fresh_bank(encoder, vocab)
        assert bank.embeddings.shape == (14, 9, 64)
        assert bank.cls.shape == (14, 64)
        assert bank.token_rows().shape == (14, 8, 64)

    def test_identical_prompts_identical_embeddings(self, encoder, vocab):
        prompts = [CluePrompt("edema", "mild", None)] * 2
        bank = encode_clue_bank(prompts, encoder, vocab, r=8)
        np.testing.assert_array_equal(bank.embeddings[0], bank.embeddings[1])

    def test_padding_rows_are_zero(self, encoder, vocab):
        prompts = [CluePrompt("edema", None, None)]  # 3 tokens
        bank = encode_clue_bank(prompts, encoder, vocab, r=8)
        assert np.abs(bank.embeddings[0, 4:]).max() == 0.0

    def test_long_prompt_truncated_with_warning(self, encoder, vocab, caplog):
        prompts = [CluePrompt("pneumonia", "severe", "left lower lobe")]  # 9 tokens
        with caplog.at_level(logging.WARNING):
            bank = encode_clue_bank(prompts, encoder, vocab, r=4)
        assert "truncating" in caplog.text
        assert bank.embeddings.shape == (1, 5, 64)

    def test_reencoding_is_bit_identical(self, encoder, vocab):
        a = fresh_bank(encoder, vocab, seed=13)
        b = fresh_bank(encoder, vocab, seed=13)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)


def toy_bank(m=3, r=2, d=4, seed=21):
    data = rng(seed).normal(size=(m, r + 1, d))
    prompts = [CluePrompt(f"d{i}", None, None) for i in range(m)]
    return ClueBank(prompts=prompts, embeddings=data, cls=data[:, 0, :].copy())


class TestClueWeights:
    def test_identical_cls_rows_give_uniform_weights(self):
        bank = toy_bank()
        bank.cls[:] = bank.cls[0]
        w = clue_weights(Tensor(rng(22).normal(size=(1, 4))), bank).data
        np.testing.assert_allclose(w, np.full((1, 3), 1 / 3), atol=1e-6)

    def test_hand_softmax_example(self):
        # dot products (2, 0, 0) over m = 3 clues
        bank = toy_bank(m=3, d=3)
        bank.cls[:] = np.eye(3)
        bank.cls[0, 0] = 2.0
        w = clue_weights(Tensor([[1.0, 0.0, 0.0]]), bank).data[0]
        np.testing.assert_allclose(w, [0.7870, 0.1065, 0.1065], atol=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_weights_are_a_probability_vector(self, seed):
        bank = toy_bank(m=14, d=8, seed=seed)
        w = clue_weights(Tensor(rng(seed + 50).normal(size=(1, 8))), bank).data
        assert (w >= 0).all()
        assert abs(w.sum() - 1.0) <= 1e-5

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            clue_weights(Tensor(np.zeros((1, 5))), toy_bank(d=4))


class TestWeighting:
    def test_zero_weight_zeroes_clue(self):
        bank = toy_bank()
        w = Tensor([[0.0, 0.6, 0.4]])
        out = weight_clues(bank, w).data
        assert np.abs(out[0]).max() == 0.0

    def test_unit_weight_preserves_clue(self):
        bank = toy_bank()
        w = Tensor([[1.0, 0.0, 0.0]])
        out = weight_clues(bank, w).data
        np.testing.assert_allclose(out[0], bank.embeddings[0], atol=1e-6)

    def test_matches_loop_oracle(self):
        bank = toy_bank(m=4, r=3, d=5, seed=33)
        w = rng(34).uniform(size=(1, 4))
        out = weight_clues(bank, Tensor(w)).data
        for i in range(4):
            for j in range(4):
                for c in range(5):
                    expected = w[0, i] * bank.embeddings[i, j, c]
                    assert abs(out[i, j, c] - expected) < 1e-6


class TestTopK:
    def test_k_equals_m_returns_all(self):
        w = [0.1, 0.5, 0.4]
        assert sorted(topk_indices(w, 3)) == [0, 1, 2]

    def test_simple_ordering(self):
        assert topk_indices([0.5, 0.3, 0.2], 2) == [0, 1]

    def test_descending_order_with_ties_to_lower_index(self):
        assert topk_indices([0.2, 0.4, 0.4], 2) == [1, 2]
        assert topk_indices([0.4, 0.2, 0.4], 2) == [0, 2]

    def test_out_of_range_k(self):
        with pytest.raises(ContractError):
            topk_indices([0.5, 0.5], 3)
        with pytest.raises(ContractError):
            topk_indices([0.5, 0.5], 0)

    def test_matches_sort_oracle_over_random_draws(self):
        for seed in range(1000):
            w = rng(seed).uniform(size=14)
            k = int(rng(seed + 7).integers(1, 15))
            oracle = sorted(range(14), key=lambda i: (-w[i], i))[:k]
            assert topk_indices(w, k) == oracle

    def test_select_shape_and_cls_dropped(self):
        bank = toy_bank(m=5, r=3, d=4, seed=44)
        w = Tensor(rng(45).uniform(size=(1, 5)))
        weighted = weight_clues(bank, w)
        selected, indices = select_topk(weighted, w, 2)
        assert selected.shape == (2, 3, 4)
        top = indices[0]
        np.testing.assert_allclose(
            selected.data[0], w.data[0, top] * bank.embeddings[top, 1:], atol=1e-6
        )


class TestInjection:
    def test_topk_invariant_to_positive_rescaling(self):
        bank = toy_bank(m=14, r=2, d=8, seed=55)
        v = rng(56).normal(size=(1, 8))
        for alpha in (0.01, 0.5, 3.0, 250.0):
            _, _, base_idx = inject_clues(Tensor(v), bank, 3)
            _, _, scaled_idx = inject_clues(Tensor(alpha * v), bank, 3)
            assert base_idx == scaled_idx

    def test_descending_weight_order(self):
        bank = toy_bank(m=6, r=2, d=8, seed=57)
        _, weights, indices = inject_clues(Tensor(rng(58).normal(size=(1, 8))), bank, 4)
        picked = weights.data[0, indices]
        assert all(picked[i] >= picked[i + 1] for i in range(3))

    def test_no_gradient_reaches_bank_from_frozen_path(self):
        bank = toy_bank(m=4, r=2, d=8, seed=59)
        v = Tensor(rng(60).normal(size=(1, 8)))  # frozen: no requires_grad
        c_s, _, _ = inject_clues(v, bank, 2)
        assert not c_s.requires_grad
