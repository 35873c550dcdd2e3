"""Throughput benchmark comparing the two frontends on identical text.

For each mode, reports train (forward+backward+update) and inference
(forward only) throughput in input words per second, together with the mean
model input length: words+specials for the character frontend,
pieces+specials for the wordpiece frontend.  Word-level input length never
exceeds piece-level length on the same sentence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as md
from . import wordpiece as wp
from .optim import OptimizerState, adam_step
from .pretrain import MlmTargetVocab, PretrainInstance, apply_whole_word_masking, instance_batch_loss

PHASE_TRAIN = "TRAIN"
PHASE_INFER = "INFER"


@dataclass
class BenchRow:
    mode: str
    phase: str
    tokens_per_sec: float
    mean_input_len: float
    total_words: int
    seconds: float

    def tsv(self) -> str:
        return (f"{self.mode}\t{self.phase}\t{self.tokens_per_sec:.1f}\t"
                f"{self.mean_input_len:.3f}\t{self.total_words}\t{self.seconds:.4f}")


@dataclass
class BenchReport:
    rows: list[BenchRow]
    input_lengths: dict[str, list[int]]  # mode -> per-example model input length

    def to_tsv(self) -> str:
        lines = ["mode\tphase\ttokens_per_sec\tmean_input_len\ttotal_words\tseconds"]
        lines += [r.tsv() for r in self.rows]
        return "\n".join(lines) + "\n"


def _instances(sentences: Sequence[Sequence[str]], mode: str,
               vocab: wp.WordpieceVocab | None, max_positions: int):
    out = []
    for sent in sentences:
        words = [w.lower() for w in sent]
        if mode == md.WORDPIECE:
            tokens = wp.tokenize_words(vocab, words)
        else:
            tokens = list(words)
        tokens = tokens[: max_positions - 2]
        tokens = ["[CLS]"] + tokens + ["[SEP]"]
        out.append(PretrainInstance(tokens=tokens, segment_ids=[0] * len(tokens), is_next=True))
    return out


def bench(
    sentences: Sequence[Sequence[str]],
    configs: dict[str, md.ModelConfig],
    vocab: wp.WordpieceVocab,
    *,
    batch_size: int = 8,
    seed: int = 0,
    repeats: int = 1,
) -> BenchReport:
    """Run both phases for each configured mode over the same sentences."""
    rows = []
    lengths: dict[str, list[int]] = {}
    total_words = sum(len(s) for s in sentences)

    for mode, config in configs.items():
        instances = _instances(sentences, mode, vocab, config.max_positions)
        lengths[mode] = [len(inst.tokens) for inst in instances]
        mean_len = float(np.mean(lengths[mode]))
        targets = MlmTargetVocab(tuple(sorted({w.lower() for s in sentences for w in s})))
        if config.mode == md.CHARACTER and config.mlm_vocab_size != targets.size:
            config = config.with_heads(config.attach_heads or (md.HEAD_MLM, md.HEAD_NSP),
                                       mlm_vocab_size=targets.size)
        elif not config.attach_heads:
            config = config.with_heads((md.HEAD_MLM, md.HEAD_NSP))
        params = md.init_params(config, seed)
        mask_rng = np.random.default_rng(seed)
        masked = [
            apply_whole_word_masking(inst, targets, rng=mask_rng, mode=config.mode,
                                     piece_vocab=vocab)
            for inst in instances
        ]

        for phase in (PHASE_TRAIN, PHASE_INFER):
            state = OptimizerState()
            drop_rng = np.random.default_rng(seed + 1)
            start = time.perf_counter()
            for _ in range(repeats):
                for lo in range(0, len(masked), batch_size):
                    chunk = masked[lo : lo + batch_size]
                    if phase == PHASE_TRAIN:
                        params.zero_grad()
                        result = instance_batch_loss(chunk, config, params, vocab=vocab,
                                                     train=True, rng=drop_rng)
                        result.loss.backward()
                        adam_step(params, params.grads(), state, lr=1e-4)
                    else:
                        instance_batch_loss(chunk, config, params, vocab=vocab, train=False)
            elapsed = time.perf_counter() - start
            rows.append(BenchRow(
                mode=mode, phase=phase,
                tokens_per_sec=total_words * repeats / elapsed if elapsed > 0 else float("inf"),
                mean_input_len=mean_len, total_words=total_words, seconds=elapsed,
            ))
    return BenchReport(rows=rows, input_lengths=lengths)
