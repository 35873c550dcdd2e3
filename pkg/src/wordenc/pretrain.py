"""Pretraining: sentence-pair instances, whole-word masking, training loop.

Instances carry [CLS] A [SEP] B [SEP] with segment ids and a next-sentence
label: half the pairs are true consecutive sentences, half draw B at random
from another document.  Masking selects whole words: in character mode the
masked slot is one word and the prediction target is its id in a top-K word
vocabulary; in wordpiece mode the selection decision covers all of a word's
pieces jointly and every piece is a prediction target.

The training loop runs the joint masked-word + next-sentence loss over a
multi-stage schedule (each stage pins updates, logical batch size, sequence
length, and peak learning rate), with gradient accumulation when the logical
batch exceeds the micro batch.

Corpus file format: UTF-8 text, one sentence per line, blank line between
documents.  Loss log: TSV with columns step, lr, mlm_loss, nsp_loss.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from . import model as md
from . import wordpiece as wp
from .fileio import atomic_write_text
from .optim import OptimizerState, adam_step, lamb_step, lr_schedule
from .params import ParameterStore

CLS, SEP, MASK = "[CLS]", "[SEP]", "[MASK]"


@dataclass
class PretrainInstance:
    tokens: list[str]              # [CLS] A [SEP] B [SEP]; pieces in wordpiece mode
    segment_ids: list[int]
    is_next: bool
    masked_positions: list[int] = field(default_factory=list)
    masked_labels: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.tokens) != len(self.segment_ids):
            raise ValueError("tokens and segment_ids differ in length")
        if len(self.masked_positions) != len(self.masked_labels):
            raise ValueError("masked positions and labels differ in length")


@dataclass(frozen=True)
class MlmTargetVocab:
    """Top-K most frequent corpus words; the only maskable/predictable words."""

    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @property
    def size(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def word_id(self, word: str) -> int:
        return self._index[word]

    def id_to_word(self, idx: int) -> str:
        return self.words[idx]

    @classmethod
    def from_documents(
        cls, documents: Sequence[Sequence[Sequence[str]]], k: int | None
    ) -> "MlmTargetVocab":
        """Top-k words by frequency (ties lexicographic); k=None keeps all."""
        counts: Counter = Counter()
        for doc in documents:
            for sentence in doc:
                counts.update(w.lower() for w in sentence)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if k is not None:
            ranked = ranked[:k]
        return cls(tuple(w for w, _ in ranked))

    def save(self, path) -> None:
        atomic_write_text(path, "".join(w + "\n" for w in self.words))

    @classmethod
    def load(cls, path) -> "MlmTargetVocab":
        with open(path, encoding="utf-8") as f:
            return cls(tuple(line.rstrip("\n") for line in f if line.rstrip("\n")))


def read_corpus(path) -> list[list[list[str]]]:
    """Read a pretraining corpus: documents of whitespace-tokenized sentences."""
    documents: list[list[list[str]]] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                if current:
                    documents.append(current)
                    current = []
                continue
            current.append(line.lower().split())
    if current:
        documents.append(current)
    return documents


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------


def build_nsp_pairs(
    documents: Sequence[Sequence[Sequence[str]]],
    max_seq: int,
    rng: np.random.Generator,
    vocab: wp.WordpieceVocab | None = None,
) -> list[PretrainInstance]:
    """Build unmasked sentence-pair instances from a sentence-segmented corpus.

    For every consecutive sentence pair, a fair coin keeps the true next
    sentence or swaps in a random sentence from another document.  Passing a
    wordpiece vocabulary emits piece tokens and measures truncation in
    pieces; otherwise tokens are words.  Pairs are truncated from the end of
    the longer side until they fit max_seq - 3 tokens.
    """
    documents = [[s for s in doc if s] for doc in documents]
    documents = [doc for doc in documents if doc]
    if len(documents) < 2:
        raise ValueError("need at least two documents to sample negative pairs")

    def prepared(sentence):
        words = [w.lower() for w in sentence]
        if vocab is not None:
            return wp.tokenize_words(vocab, words)
        return words

    instances = []
    for di, doc in enumerate(documents):
        for si in range(len(doc) - 1):
            a = prepared(doc[si])
            if rng.random() < 0.5:
                b = prepared(doc[si + 1])
                is_next = True
            else:
                dj = int(rng.integers(len(documents) - 1))
                if dj >= di:
                    dj += 1
                other = documents[dj]
                b = prepared(other[int(rng.integers(len(other)))])
                is_next = False
            a, b = list(a), list(b)
            budget = max_seq - 3
            if budget < 2:
                raise ValueError(f"max_seq {max_seq} leaves no room for a sentence pair")
            while len(a) + len(b) > budget:
                side = a if len(a) >= len(b) else b
                side.pop()
            tokens = [CLS] + a + [SEP] + b + [SEP]
            segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
            instances.append(PretrainInstance(tokens=tokens, segment_ids=segments, is_next=is_next))
    return instances


def word_groups(tokens: Sequence[str], mode: str) -> list[tuple[str, list[int]]]:
    """(word, positions) groups, skipping [CLS]/[SEP].

    In wordpiece mode consecutive ## pieces join their head piece and the
    word text is the concatenation with prefixes stripped.
    """
    groups: list[tuple[str, list[int]]] = []
    for i, tok in enumerate(tokens):
        if tok in (CLS, SEP):
            continue
        if mode == md.WORDPIECE and tok.startswith(wp.CONTINUATION) and groups:
            prev_word, prev_positions = groups[-1]
            if prev_positions[-1] == i - 1:
                groups[-1] = (prev_word + tok[len(wp.CONTINUATION):], prev_positions + [i])
                continue
        groups.append((tok, [i]))
    return groups


def apply_whole_word_masking(
    instance: PretrainInstance,
    targets: MlmTargetVocab,
    mask_rate: float = 0.15,
    rng: np.random.Generator | None = None,
    mode: str = md.CHARACTER,
    piece_vocab: wp.WordpieceVocab | None = None,
    branch_probs: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> PretrainInstance:
    """Mask whole words of an unmasked instance.

    Draw order (fixed, for reproducibility): words are visited left to
    right; out-of-target words consume no randomness; each eligible word
    draws one uniform for selection, and each selected word draws one
    uniform for the branch (mask / random replacement / keep).  The random
    branch then draws one replacement id per affected slot, left to right.

    In character mode the masked slot is the word and the label is its
    target-vocab id.  In wordpiece mode the branch decision covers all of
    the word's pieces; every piece becomes a prediction target labeled with
    its original piece id, and random replacement draws pieces from the
    non-special piece inventory so the sequence length never changes.
    """
    if instance.masked_positions:
        raise ValueError("instance is already masked")
    if targets.size == 0:
        raise ValueError("empty MLM target vocabulary")
    if rng is None:
        raise ValueError("masking needs an rng")
    if mode == md.WORDPIECE and piece_vocab is None:
        raise ValueError("wordpiece-mode masking needs the piece vocabulary")
    p_mask, p_random, p_keep = branch_probs
    if abs(p_mask + p_random + p_keep - 1.0) > 1e-9:
        raise ValueError("branch probabilities must sum to 1")

    tokens = list(instance.tokens)
    positions: list[int] = []
    labels: list[int] = []
    n_specials = len(wp.SPECIALS)

    for word, slots in word_groups(instance.tokens, mode):
        if word not in targets:
            continue
        if rng.random() >= mask_rate:
            continue
        branch = rng.random()
        if mode == md.CHARACTER:
            pos = slots[0]
            positions.append(pos)
            labels.append(targets.word_id(word))
            if branch < p_mask:
                tokens[pos] = MASK
            elif branch < p_mask + p_random:
                tokens[pos] = targets.id_to_word(int(rng.integers(targets.size)))
            # else keep
        else:
            for pos in slots:
                positions.append(pos)
                labels.append(piece_vocab.piece_id(instance.tokens[pos]))
            if branch < p_mask:
                for pos in slots:
                    tokens[pos] = wp.MASK
            elif branch < p_mask + p_random:
                for pos in slots:
                    rand_id = n_specials + int(rng.integers(piece_vocab.size - n_specials))
                    tokens[pos] = piece_vocab.id_to_piece(rand_id)
            # else keep

    return replace(instance, tokens=tokens, masked_positions=positions, masked_labels=labels)


# ---------------------------------------------------------------------------
# batched joint loss
# ---------------------------------------------------------------------------


@dataclass
class BatchLoss:
    loss: ad.Tensor
    mlm_loss: float
    nsp_loss: float
    n_masked: int
    mlm_correct: int


def instance_batch_loss(
    instances: Sequence[PretrainInstance],
    config: md.ModelConfig,
    params: ParameterStore,
    *,
    vocab: wp.WordpieceVocab | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> BatchLoss:
    """Joint MLM + NSP loss (equal-weight sum) over a batch of instances."""
    batch = md.embed_batch(
        [inst.tokens for inst in instances],
        [inst.segment_ids for inst in instances],
        config, params, vocab=vocab, pre_tokenized=True, train=train, rng=rng,
    )
    n = batch.vectors.shape[1]
    encoded = md.encode(batch.vectors, batch.attention_mask, config, params, train=train, rng=rng)

    flat_positions = []
    labels = []
    for i, inst in enumerate(instances):
        for pos, label in zip(inst.masked_positions, inst.masked_labels):
            flat_positions.append(i * n + pos)
            labels.append(label)

    n_masked = len(labels)
    correct = 0
    if n_masked:
        logits = md.heads_forward(encoded, None, md.HEAD_MLM, params, config,
                                  positions=np.asarray(flat_positions))
        label_arr = np.asarray(labels)
        mlm = ad.softmax_cross_entropy(logits, label_arr, reduction="mean")
        correct = int((logits.data.argmax(axis=-1) == label_arr).sum())
    else:
        mlm = ad.constant(np.zeros((), dtype=encoded.dtype))

    nsp_logits = md.heads_forward(encoded, None, md.HEAD_NSP, params, config)
    nsp_labels = np.asarray([1 if inst.is_next else 0 for inst in instances])
    nsp = ad.softmax_cross_entropy(nsp_logits, nsp_labels, reduction="mean")

    total = ad.add(mlm, nsp) if n_masked else nsp
    return BatchLoss(loss=total, mlm_loss=float(mlm.data), nsp_loss=float(nsp.data),
                     n_masked=n_masked, mlm_correct=correct)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageConfig:
    updates: int
    batch_size: int
    seq_len: int
    peak_lr: float


@dataclass
class LogRow:
    step: int
    lr: float
    mlm_loss: float
    nsp_loss: float

    def tsv(self) -> str:
        return f"{self.step}\t{self.lr:.8g}\t{self.mlm_loss:.6f}\t{self.nsp_loss:.6f}"


def write_loss_log(rows: Iterable[LogRow], path) -> None:
    text = "step\tlr\tmlm_loss\tnsp_loss\n" + "".join(r.tsv() + "\n" for r in rows)
    atomic_write_text(path, text)


@dataclass
class PretrainResult:
    params: ParameterStore
    log: list[LogRow]
    targets: MlmTargetVocab | None
    instances_seen: int


def pretrain(
    documents: Sequence[Sequence[Sequence[str]]],
    config: md.ModelConfig,
    schedule: Sequence[StageConfig],
    seed: int,
    *,
    piece_vocab: wp.WordpieceVocab | None = None,
    targets: MlmTargetVocab | None = None,
    optimizer: str = "lamb",
    weight_decay: float = 0.01,
    warmup_fraction: float = 0.01,
    mask_rate: float = 0.15,
    micro_batch: int | None = None,
    log_every: int = 10,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
) -> PretrainResult:
    """Run the joint MLM+NSP pretraining schedule from scratch.

    Deterministic: all randomness (init, pair sampling, masking, batch
    order) derives from ``seed``, so identical seed+config produce
    bit-identical parameters.  With ``checkpoint_dir`` set, a checkpoint is
    written every ``checkpoint_every`` global steps plus one at the end.
    """
    if config.mode == md.WORDPIECE and piece_vocab is None:
        raise ValueError("wordpiece pretraining needs the piece vocabulary")
    if config.mode == md.CHARACTER:
        if targets is None:
            k = config.mlm_vocab_size
            if not k:
                raise ValueError("character pretraining needs mlm_vocab_size or explicit targets")
            targets = MlmTargetVocab.from_documents(documents, k)
        if config.mlm_vocab_size != targets.size:
            config = replace(config, mlm_vocab_size=targets.size)
    elif targets is None:
        # wordpiece mode: any corpus word is maskable unless a top-K is given
        targets = MlmTargetVocab.from_documents(documents, None)
    if optimizer not in ("lamb", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    needed = {md.HEAD_MLM, md.HEAD_NSP}
    if not needed.issubset(config.attach_heads):
        config = replace(config, attach_heads=tuple(sorted(needed.union(config.attach_heads))))

    params = md.init_params(config, seed)
    state = OptimizerState()
    log: list[LogRow] = []
    instances_seen = 0

    for stage_idx, stage in enumerate(schedule):
        data_rng = np.random.default_rng([seed, stage_idx, 1])
        mask_rng = np.random.default_rng([seed, stage_idx, 2])
        drop_rng = np.random.default_rng([seed, stage_idx, 3])
        pool = build_nsp_pairs(documents, stage.seq_len, data_rng,
                               vocab=piece_vocab if config.mode == md.WORDPIECE else None)
        if not pool:
            raise ValueError("corpus produced no sentence-pair instances")
        order = np.arange(len(pool))
        cursor = len(pool)  # force initial shuffle
        micro = micro_batch or stage.batch_size

        for step in range(1, stage.updates + 1):
            chosen = []
            while len(chosen) < stage.batch_size:
                if cursor >= len(order):
                    data_rng.shuffle(order)
                    cursor = 0
                chosen.append(pool[order[cursor]])
                cursor += 1
            masked = [
                apply_whole_word_masking(
                    inst, targets, mask_rate=mask_rate, rng=mask_rng, mode=config.mode,
                    piece_vocab=piece_vocab,
                )
                for inst in chosen
            ]
            instances_seen += len(masked)

            params.zero_grad()
            mlm_total, nsp_total = 0.0, 0.0
            n_chunks = 0
            for lo in range(0, len(masked), micro):
                chunk = masked[lo : lo + micro]
                result = instance_batch_loss(chunk, config, params, vocab=piece_vocab,
                                             train=True, rng=drop_rng)
                if not np.isfinite(float(result.loss.data)):
                    raise ArithmeticError(
                        f"non-finite loss at stage {stage_idx} step {step}; aborting"
                    )
                result.loss.backward()
                mlm_total += result.mlm_loss
                nsp_total += result.nsp_loss
                n_chunks += 1
            grads = params.grads()
            if n_chunks > 1:
                grads = {k: g / n_chunks for k, g in grads.items()}
            lr = lr_schedule(step, stage.updates, stage.peak_lr, warmup_fraction)
            if optimizer == "lamb":
                lamb_step(params, grads, state, lr, weight_decay=weight_decay)
            else:
                adam_step(params, grads, state, lr, weight_decay=weight_decay)
            if step % log_every == 0 or step == 1 or step == stage.updates:
                log.append(LogRow(step=state.step, lr=lr,
                                  mlm_loss=mlm_total / n_chunks, nsp_loss=nsp_total / n_chunks))
            if checkpoint_dir is not None and checkpoint_every and \
                    state.step % checkpoint_every == 0:
                from .checkpoint import save_checkpoint
                save_checkpoint(params, config,
                                Path(checkpoint_dir) / f"step{state.step:06d}")

    if checkpoint_dir is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(params, config, Path(checkpoint_dir) / "final")
    return PretrainResult(params=params, log=log, targets=targets, instances_seen=instances_seen)


def masked_word_accuracy(
    instances: Sequence[PretrainInstance],
    config: md.ModelConfig,
    params: ParameterStore,
    vocab: wp.WordpieceVocab | None = None,
    batch_size: int = 16,
) -> float:
    """Fraction of masked slots whose argmax prediction matches the label."""
    total, correct = 0, 0
    for lo in range(0, len(instances), batch_size):
        chunk = [inst for inst in instances[lo : lo + batch_size] if inst.masked_positions]
        if not chunk:
            continue
        result = instance_batch_loss(chunk, config, params, vocab=vocab, train=False)
        total += result.n_masked
        correct += result.mlm_correct
    return correct / total if total else float("nan")
