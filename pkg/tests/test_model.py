"""Encoder configs, parameter accounting, forward semantics, gradients."""

import numpy as np
import pytest

from wordenc import autodiff as ad
from wordenc import model as md
from wordenc import wordpiece as wp
from wordenc.charcnn import CharCnnSpec
from wordenc.gradcheck import grad_check

TINY_VOCAB = wp.WordpieceVocab.from_pieces(
    list(wp.SPECIALS)
    + ["the", "cat", "sat", "mat", "on", "a", "un", "##aff", "##able", "##a", "##b",
       "c", "##c", "t", "##t"]
)


def tiny_wp_config(**kw):
    kw.setdefault("vocab_size", TINY_VOCAB.size)
    return md.tiny_config(md.WORDPIECE, **kw)


class TestConfigValidation:
    def test_hidden_divisible_by_heads(self):
        with pytest.raises(ValueError):
            md.ModelConfig(mode=md.WORDPIECE, vocab_size=10, hidden=30, heads=4)

    def test_wordpiece_needs_vocab_size(self):
        with pytest.raises(ValueError):
            md.ModelConfig(mode=md.WORDPIECE)

    def test_character_needs_charcnn(self):
        with pytest.raises(ValueError):
            md.ModelConfig(mode=md.CHARACTER)

    def test_mlm_over_k_rejected_in_wordpiece_mode(self):
        with pytest.raises(ValueError):
            md.ModelConfig(mode=md.WORDPIECE, vocab_size=10, mlm_vocab_size=50)

    def test_round_trip_dict(self):
        config = md.base_config(md.CHARACTER)
        again = md.ModelConfig.from_dict(config.to_dict())
        assert again == config


class TestParameterAccounting:
    def test_base_wordpiece_close_to_reference_total(self):
        config = md.base_config(md.WORDPIECE)
        total = md.count_parameters(config)
        assert abs(total - 109.5e6) / 109.5e6 < 0.01

    def test_base_character_close_to_reference_total(self):
        config = md.base_config(md.CHARACTER)
        total = md.count_parameters(config)
        assert abs(total - 104.6e6) / 104.6e6 < 0.01

    def test_frontend_swap_identity(self):
        wp_total = md.count_parameters(md.base_config(md.WORDPIECE))
        char_total = md.count_parameters(md.base_config(md.CHARACTER))
        predicted = wp_total - 30_522 * 768 + 18_562_416
        assert abs(predicted - char_total) <= 100_000

    def test_core_architecture_totals_without_heads(self):
        # without task/pretraining heads the counts are the well-known core totals
        wp_core = md.count_parameters(
            md.ModelConfig(mode=md.WORDPIECE, vocab_size=30_522)
        )
        char_core = md.count_parameters(
            md.ModelConfig(mode=md.CHARACTER, charcnn=CharCnnSpec())
        )
        assert wp_core == 109_482_240 - 590_592  # no pooler without pooled heads
        assert char_core == wp_core - 30_522 * 768 + 18_562_416

    def test_tiny_enumeration_oracle(self):
        config = md.ModelConfig(mode=md.WORDPIECE, vocab_size=10, hidden=8,
                                max_positions=16, layers=1, heads=2, ffn=16)
        # independent enumeration of every named tensor
        emb = 10 * 8 + 16 * 8 + 2 * 8 + 2 * 8
        qkv = 3 * (8 * 8 + 8)
        attn_out = 8 * 8 + 8
        layer = qkv + attn_out + 2 * 8 + (8 * 16 + 16) + (16 * 8 + 8) + 2 * 8
        assert emb + layer == 840
        assert md.count_parameters(config) == 840

    def test_count_is_pure_function_of_config(self):
        config = tiny_wp_config(attach_heads=(md.HEAD_MLM, md.HEAD_NSP))
        params = md.init_params(config, seed=0)
        assert params.total_parameters() == md.count_parameters(config)
        assert set(params.names()) == set(md.named_shapes(config))

    def test_character_decoder_counted_when_target_vocab_set(self):
        base = md.tiny_config(md.CHARACTER, attach_heads=(md.HEAD_MLM,))
        with_k = base.with_heads((md.HEAD_MLM,), mlm_vocab_size=50)
        d = base.hidden
        assert md.count_parameters(with_k) - md.count_parameters(base) == 50 * d + 50


class TestDeterministicInit:
    def test_same_seed_bit_identical(self):
        config = md.tiny_config(md.CHARACTER)
        a = md.init_params(config, seed=3)
        b = md.init_params(config, seed=3)
        for name, t in a.items():
            assert np.array_equal(t.data, b[name].data)

    def test_different_seed_differs(self):
        config = md.tiny_config(md.CHARACTER)
        a = md.init_params(config, seed=3)
        b = md.init_params(config, seed=4)
        assert any(not np.array_equal(t.data, b[name].data) for name, t in a.items())

    def test_gate_bias_favors_identity(self):
        config = md.tiny_config(md.CHARACTER)
        params = md.init_params(config, seed=0)
        np.testing.assert_allclose(
            params["frontend.charcnn.highway0.gate.bias"].data, -2.0
        )


class TestEmbedSequence:
    def test_character_mode_one_row_per_word(self):
        config = md.tiny_config(md.CHARACTER)
        params = md.init_params(config, seed=0)
        words = ["[CLS]", "the", "cat", "[SEP]"]
        seq = md.embed_sequence(words, [0, 0, 0, 0], config, params)
        assert seq.vectors.shape == (4, config.hidden)
        assert seq.token_alignment == [(0, 1), (1, 2), (2, 3), (3, 4)]

    def test_wordpiece_mode_grows_with_fragmentation(self):
        config = tiny_wp_config()
        params = md.init_params(config, seed=0)
        words = ["[CLS]", "unaffable", "[SEP]"]
        seq = md.embed_sequence(words, [0, 0, 0], config, params, vocab=TINY_VOCAB)
        # unaffable -> un ##aff ##able: sequence grows by 2 rows
        assert seq.vectors.shape == (5, config.hidden)
        assert seq.token_alignment[1] == (1, 4)

    def test_wordpiece_two_piece_word_grows_by_one_row(self):
        config = tiny_wp_config()
        params = md.init_params(config, seed=0)
        assert wp.tokenize_word(TINY_VOCAB, "una") == ["un", "##a"]
        seq = md.embed_sequence(["[CLS]", "una", "[SEP]"], [0, 0, 0], config, params,
                                vocab=TINY_VOCAB)
        assert seq.vectors.shape == (4, config.hidden)

    def test_zero_embedding_tables_give_layernorm_beta(self):
        config = tiny_wp_config()
        params = md.init_params(config, seed=0)
        for name, t in params.items():
            if name.startswith("frontend."):
                t.data[:] = 0.0
        beta = np.arange(config.hidden, dtype=np.float32)
        params["frontend.layer_norm.beta"].data[:] = beta
        params["frontend.layer_norm.gamma"].data[:] = 1.0
        seq = md.embed_sequence(["the", "cat"], [0, 0], config, params, vocab=TINY_VOCAB)
        for row in seq.vectors.data:
            np.testing.assert_allclose(row, beta, atol=1e-5)

    def test_bad_segment_rejected(self):
        config = md.tiny_config(md.CHARACTER)
        params = md.init_params(config, seed=0)
        with pytest.raises(ValueError):
            md.embed_sequence(["a"], [2], config, params)

    def test_overflow_rejected(self):
        config = md.tiny_config(md.CHARACTER, max_positions=4)
        params = md.init_params(config, seed=0)
        with pytest.raises(ValueError):
            md.embed_sequence(["a"] * 5, [0] * 5, config, params)


class TestEncode:
    def test_zero_layers_identity(self):
        config = md.tiny_config(md.CHARACTER, layers=0)
        params = md.init_params(config, seed=0)
        x = ad.constant(np.random.default_rng(0).standard_normal((2, 3, config.hidden)))
        out = md.encode(x, np.ones((2, 3), dtype=bool), config, params)
        assert out is x

    def test_output_shape(self):
        config = md.tiny_config(md.CHARACTER)
        params = md.init_params(config, seed=0)
        x = ad.constant(np.random.default_rng(0).standard_normal((2, 5, config.hidden))
                        .astype(np.float32))
        out = md.encode(x, np.ones((2, 5), dtype=bool), config, params)
        assert out.shape == (2, 5, config.hidden)

    def test_masked_positions_cannot_influence_unmasked_rows(self):
        config = md.tiny_config(md.CHARACTER)
        params = md.init_params(config, seed=1)
        rng = np.random.default_rng(5)
        base = rng.standard_normal((1, 6, config.hidden)).astype(np.float32)
        mask = np.array([[True, True, True, True, False, False]])

        out_a = md.encode(ad.constant(base.copy()), mask, config, params).data
        perturbed = base.copy()
        perturbed[0, 4:, :] = rng.standard_normal((2, config.hidden)) * 100.0
        out_b = md.encode(ad.constant(perturbed), mask, config, params).data
        # unmasked rows bit-identical, masked rows may differ
        assert np.array_equal(out_a[0, :4], out_b[0, :4])


class TestHeads:
    def test_pair_class_zero_weights_uniform(self):
        config = tiny_wp_config(attach_heads=(md.HEAD_PAIR_CLASS,), num_labels=3)
        params = md.init_params(config, seed=0)
        params["heads.classifier.weight"].data[:] = 0.0
        params["heads.classifier.bias"].data[:] = 0.0
        batch = md.embed_batch([["the", "cat"]], [[0, 0]], config, params, vocab=TINY_VOCAB)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        logits = md.heads_forward(enc, None, md.HEAD_PAIR_CLASS, params, config)
        probs = ad.softmax(logits).data
        np.testing.assert_allclose(probs, np.full((1, 3), 1 / 3), atol=1e-7)

    def test_mlm_distribution_sums_to_one(self):
        config = md.tiny_config(md.CHARACTER, attach_heads=(md.HEAD_MLM,), mlm_vocab_size=13)
        params = md.init_params(config, seed=0)
        batch = md.embed_batch([["the", "cat", "sat"]], [[0, 0, 0]], config, params)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        logits = md.heads_forward(enc, None, md.HEAD_MLM, params, config, positions=np.array([1, 2]))
        probs = ad.softmax(logits).data
        np.testing.assert_allclose(probs.sum(axis=-1), np.ones(2), atol=1e-6)

    def test_token_tag_one_row_per_word(self):
        config = tiny_wp_config(attach_heads=(md.HEAD_TOKEN_TAG,), num_labels=4)
        params = md.init_params(config, seed=0)
        words = ["unaffable", "cat"]
        batch = md.embed_batch([words], [[0, 0]], config, params, vocab=TINY_VOCAB)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        logits = md.heads_forward(enc, batch.alignments, md.HEAD_TOKEN_TAG, params, config)
        assert logits.shape == (2, 4)  # one row per word, not per piece

    def test_pair_score_scalar_per_example(self):
        config = tiny_wp_config(attach_heads=(md.HEAD_PAIR_SCORE,))
        params = md.init_params(config, seed=0)
        batch = md.embed_batch([["cat"], ["mat"]], [[0], [0]], config, params, vocab=TINY_VOCAB)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        scores = md.heads_forward(enc, None, md.HEAD_PAIR_SCORE, params, config)
        assert scores.shape == (2,)

    def test_unattached_head_rejected(self):
        config = tiny_wp_config()
        params = md.init_params(config, seed=0)
        batch = md.embed_batch([["cat"]], [[0]], config, params, vocab=TINY_VOCAB)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        with pytest.raises(ValueError):
            md.heads_forward(enc, None, md.HEAD_NSP, params, config)

    def test_wordpiece_mlm_decoder_is_tied(self):
        config = tiny_wp_config(attach_heads=(md.HEAD_MLM,))
        params = md.init_params(config, seed=0)
        assert "heads.mlm.decoder.weight" not in params
        batch = md.embed_batch([["cat", "sat"]], [[0, 0]], config, params, vocab=TINY_VOCAB)
        enc = md.encode(batch.vectors, batch.attention_mask, config, params)
        logits = md.heads_forward(enc, None, md.HEAD_MLM, params, config, positions=np.array([0]))
        assert logits.shape == (1, TINY_VOCAB.size)


TINY_CHAR_SPEC = CharCnnSpec(embed_dim=4, filters=((1, 4), (2, 4), (3, 8)), highway_layers=2)


def _tiny_full_config():
    return md.ModelConfig(
        mode=md.CHARACTER, layers=1, heads=2, hidden=16, ffn=32, max_positions=16,
        dropout=0.0, charcnn=TINY_CHAR_SPEC, mlm_vocab_size=11,
        attach_heads=(md.HEAD_MLM, md.HEAD_NSP),
    )


@pytest.mark.parametrize("seed", range(10))
def test_full_forward_mlm_nsp_gradients(seed):
    """Whole-model check: frontend, encoder, both pretraining heads."""
    from wordenc.pretrain import PretrainInstance, instance_batch_loss

    config = _tiny_full_config()
    params = md.init_params(config, seed=seed).astype(np.float64)
    inst = PretrainInstance(
        tokens=["[CLS]", "the", "[MASK]", "[SEP]", "cat", "sat", "[SEP]"],
        segment_ids=[0, 0, 0, 0, 1, 1, 1],
        is_next=bool(seed % 2),
        masked_positions=[2],
        masked_labels=[seed % 11],
    )

    def fn(p):
        return instance_batch_loss([inst], config, p).loss

    report = grad_check(fn, params, eps=1e-5, tol=1e-4, max_entries_per_tensor=24,
                        rng=np.random.default_rng(seed))
    assert report.passed, report.summary()
