"""Throughput benchmark shape and length accounting."""

import numpy as np

from wordenc import model as md
from wordenc import wordpiece as wp
from wordenc.bench import PHASE_INFER, PHASE_TRAIN, bench


def corpus_and_vocab():
    # vocabulary learned on different text, so the bench corpus is
    # fragmentation-heavy for the wordpiece frontend; bench words reuse the
    # vocabulary's characters so nothing collapses to [UNK]
    vocab_corpus = ["the", "cat", "sat", "mat", "dog", "ran"] * 5
    vocab = wp.learn_vocab(vocab_corpus, target_size=40)
    sentences = [
        ["dermatogram", "roentgens", "charted"],
        ["hemostats", "gathered", "thereon"],
        ["madreseconds", "emanated", "strange"],
    ]
    return sentences, vocab


def test_report_has_both_phases_per_mode():
    sentences, vocab = corpus_and_vocab()
    configs = {
        md.CHARACTER: md.tiny_config(md.CHARACTER, layers=1, hidden=16, ffn=32),
        md.WORDPIECE: md.tiny_config(md.WORDPIECE, layers=1, hidden=16, ffn=32,
                                     vocab_size=vocab.size),
    }
    report = bench(sentences, configs, vocab, batch_size=2, seed=0)
    combos = {(r.mode, r.phase) for r in report.rows}
    assert combos == {
        (md.CHARACTER, PHASE_TRAIN), (md.CHARACTER, PHASE_INFER),
        (md.WORDPIECE, PHASE_TRAIN), (md.WORDPIECE, PHASE_INFER),
    }
    assert all(r.tokens_per_sec > 0 for r in report.rows)


def test_word_level_never_longer_than_wordpiece():
    sentences, vocab = corpus_and_vocab()
    configs = {
        md.CHARACTER: md.tiny_config(md.CHARACTER, layers=1, hidden=16, ffn=32),
        md.WORDPIECE: md.tiny_config(md.WORDPIECE, layers=1, hidden=16, ffn=32,
                                     vocab_size=vocab.size),
    }
    report = bench(sentences, configs, vocab, batch_size=2, seed=0)
    for char_len, piece_len in zip(report.input_lengths[md.CHARACTER],
                                   report.input_lengths[md.WORDPIECE]):
        assert char_len <= piece_len


def test_fragmentation_heavy_text_strictly_longer_for_wordpiece():
    sentences, vocab = corpus_and_vocab()
    configs = {
        md.CHARACTER: md.tiny_config(md.CHARACTER, layers=1, hidden=16, ffn=32),
        md.WORDPIECE: md.tiny_config(md.WORDPIECE, layers=1, hidden=16, ffn=32,
                                     vocab_size=vocab.size),
    }
    report = bench(sentences, configs, vocab, batch_size=2, seed=0)
    char_mean = np.mean(report.input_lengths[md.CHARACTER])
    piece_mean = np.mean(report.input_lengths[md.WORDPIECE])
    assert piece_mean > char_mean


def test_tsv_shape():
    sentences, vocab = corpus_and_vocab()
    configs = {md.CHARACTER: md.tiny_config(md.CHARACTER, layers=1, hidden=16, ffn=32)}
    report = bench(sentences, configs, vocab, batch_size=2, seed=0)
    lines = report.to_tsv().strip().splitlines()
    assert lines[0].startswith("mode\tphase")
    assert len(lines) == 1 + len(report.rows)
