"""Task fine-tuning: data formats, training protocol, prediction, metrics.

Three task shapes are supported: BIO token tagging, sentence-pair
classification, and sentence-pair regression.  The protocol trains with the
decoupled-decay Adam optimizer under a linear warmup/decay schedule,
evaluates on validation after every epoch, keeps the best-validation
snapshot, and reports the test metric from that snapshot only.  When no
validation split is supplied, 20% of the training set (floor) is carved off
deterministically.

File formats: token tagging reads CoNLL-style "token<TAB>tag" lines with
blank lines between sentences; classification reads TSV
"text_a<TAB>text_b<TAB>label" (text_b may be empty); regression reads the
same with a trailing real score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics as mt
from . import model as md
from . import wordpiece as wp
from .fileio import atomic_write_text
from .optim import OptimizerState, adam_step, lr_schedule
from .params import ParameterStore

KIND_TOKEN_TAG = "TOKEN_TAG"
KIND_PAIR_CLASS = "PAIR_CLASS"
KIND_PAIR_SCORE = "PAIR_SCORE"

METRIC_SPAN_F1 = "span_f1"
METRIC_ACCURACY = "accuracy"
METRIC_MICRO_F1_POSITIVE = "micro_f1_positive"
METRIC_PEARSON = "pearson"

_KIND_METRICS = {
    KIND_TOKEN_TAG: (METRIC_SPAN_F1,),
    KIND_PAIR_CLASS: (METRIC_ACCURACY, METRIC_MICRO_F1_POSITIVE),
    KIND_PAIR_SCORE: (METRIC_PEARSON,),
}

_KIND_HEAD = {
    KIND_TOKEN_TAG: md.HEAD_TOKEN_TAG,
    KIND_PAIR_CLASS: md.HEAD_PAIR_CLASS,
    KIND_PAIR_SCORE: md.HEAD_PAIR_SCORE,
}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    labels: tuple[str, ...] = ()
    metric: str = ""
    negative_label: str | None = None

    def __post_init__(self):
        if self.kind not in _KIND_METRICS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        metric = self.metric or _KIND_METRICS[self.kind][0]
        object.__setattr__(self, "metric", metric)
        if metric not in _KIND_METRICS[self.kind]:
            raise ValueError(f"metric {metric!r} does not match task kind {self.kind}")
        if metric == METRIC_MICRO_F1_POSITIVE and self.negative_label not in self.labels:
            raise ValueError("micro_f1_positive needs negative_label among the labels")
        if self.kind != KIND_PAIR_SCORE and not self.labels:
            raise ValueError(f"{self.kind} needs a label set")

    @property
    def head(self) -> str:
        return _KIND_HEAD[self.kind]

    def label_id(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"label {label!r} outside the task label set") from None


@dataclass
class TaskExample:
    tokens: list[str] | None = None   # TOKEN_TAG
    tags: list[str] | None = None
    text_a: str | None = None         # PAIR_CLASS / PAIR_SCORE
    text_b: str | None = None
    label: str | None = None
    score: float | None = None


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def load_token_tag(path) -> list[TaskExample]:
    examples = []
    tokens: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                if tokens:
                    examples.append(TaskExample(tokens=tokens, tags=tags))
                    tokens, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"bad token-tag line: {line!r}")
            tokens.append(parts[0].lower())
            tags.append(parts[1])
    if tokens:
        examples.append(TaskExample(tokens=tokens, tags=tags))
    return examples


def load_pair_class(path) -> list[TaskExample]:
    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"bad pair-class line: {line!r}")
            examples.append(TaskExample(text_a=parts[0].lower(), text_b=parts[1].lower(),
                                        label=parts[2]))
    return examples


def load_pair_score(path) -> list[TaskExample]:
    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"bad pair-score line: {line!r}")
            examples.append(TaskExample(text_a=parts[0].lower(), text_b=parts[1].lower(),
                                        score=float(parts[2])))
    return examples


def load_task_file(task: TaskSpec, path) -> list[TaskExample]:
    if task.kind == KIND_TOKEN_TAG:
        return load_token_tag(path)
    if task.kind == KIND_PAIR_CLASS:
        return load_pair_class(path)
    return load_pair_score(path)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def _example_tokens(task: TaskSpec, ex: TaskExample) -> tuple[list[str], list[int]]:
    if task.kind == KIND_TOKEN_TAG:
        tokens = ["[CLS]"] + list(ex.tokens) + ["[SEP]"]
        return tokens, [0] * len(tokens)
    a = ex.text_a.split()
    b = (ex.text_b or "").split()
    tokens = ["[CLS]"] + a + ["[SEP]"]
    segments = [0] * len(tokens)
    if b:
        tokens += b + ["[SEP]"]
        segments += [1] * (len(b) + 1)
    return tokens, segments


def _word_alignments(batch: md.EncodedBatch, batch_tokens: list[list[str]]):
    """Spans of the real words only (drop [CLS]/[SEP] spans)."""
    trimmed = []
    for spans, tokens in zip(batch.alignments, batch_tokens):
        keep = [span for span, tok in zip(spans, tokens) if tok not in ("[CLS]", "[SEP]")]
        trimmed.append(keep)
    return trimmed


def _forward(task, examples, config, params, vocab, train, rng):
    batch_tokens, batch_segments = [], []
    for ex in examples:
        tokens, segments = _example_tokens(task, ex)
        batch_tokens.append(tokens)
        batch_segments.append(segments)
    batch = md.embed_batch(batch_tokens, batch_segments, config, params,
                           vocab=vocab, train=train, rng=rng)
    encoded = md.encode(batch.vectors, batch.attention_mask, config, params,
                        train=train, rng=rng)
    if task.kind == KIND_TOKEN_TAG:
        alignments = _word_alignments(batch, batch_tokens)
        logits = md.heads_forward(encoded, alignments, md.HEAD_TOKEN_TAG, params, config)
        return logits, alignments
    logits = md.heads_forward(encoded, None, task.head, params, config)
    return logits, None


def batch_loss(task, examples, config, params, vocab=None, train=False, rng=None) -> ad.Tensor:
    logits, _ = _forward(task, examples, config, params, vocab, train, rng)
    if task.kind == KIND_TOKEN_TAG:
        targets = np.asarray([task.label_id(t) for ex in examples for t in ex.tags])
        return ad.softmax_cross_entropy(logits, targets, reduction="mean")
    if task.kind == KIND_PAIR_CLASS:
        targets = np.asarray([task.label_id(ex.label) for ex in examples])
        return ad.softmax_cross_entropy(logits, targets, reduction="mean")
    targets = np.asarray([ex.score for ex in examples], dtype=logits.dtype)
    return ad.mse_loss(logits, targets, reduction="mean")


def predict(task, examples, config, params, vocab=None, batch_size: int = 32):
    """Deterministic (eval-mode) predictions for a list of examples."""
    out = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo : lo + batch_size]
        logits, _ = _forward(task, chunk, config, params, vocab, False, None)
        if task.kind == KIND_TOKEN_TAG:
            ids = logits.data.argmax(axis=-1)
            pos = 0
            for ex in chunk:
                n = len(ex.tokens)
                out.append([task.labels[i] for i in ids[pos : pos + n]])
                pos += n
        elif task.kind == KIND_PAIR_CLASS:
            out.extend(task.labels[i] for i in logits.data.argmax(axis=-1))
        else:
            out.extend(float(v) for v in logits.data)
    return out


def gold_values(task: TaskSpec, examples: Sequence[TaskExample]):
    if task.kind == KIND_TOKEN_TAG:
        return [list(ex.tags) for ex in examples]
    if task.kind == KIND_PAIR_CLASS:
        return [ex.label for ex in examples]
    return [ex.score for ex in examples]


def compute_metric(task: TaskSpec, predictions, gold) -> float:
    """Score predictions against gold with the task's pinned metric."""
    if task.metric == METRIC_SPAN_F1:
        return mt.span_f1(predictions, gold)
    if task.metric == METRIC_ACCURACY:
        return mt.accuracy(predictions, gold)
    if task.metric == METRIC_MICRO_F1_POSITIVE:
        return mt.micro_f1_positive(predictions, gold, task.negative_label)
    return mt.pearson(predictions, gold)


def evaluate(task, examples, config, params, vocab=None, batch_size: int = 32) -> float:
    preds = predict(task, examples, config, params, vocab=vocab, batch_size=batch_size)
    return compute_metric(task, preds, gold_values(task, examples))


# ---------------------------------------------------------------------------
# training protocol
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    val_scores: list[float]
    best_epoch: int
    test_score: float
    predictions: list

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "val_scores": self.val_scores,
            "best_epoch": self.best_epoch,
            "test_score": self.test_score,
            "predictions": self.predictions,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunResult":
        return cls(seed=d["seed"], val_scores=d["val_scores"], best_epoch=d["best_epoch"],
                   test_score=d["test_score"], predictions=d["predictions"])

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunResult":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


def aggregate_results(results: "Sequence[RunResult]") -> tuple[float, float]:
    """Mean and (sample) std of test scores over seeds."""
    scores = [r.test_score for r in results]
    if not scores:
        raise ValueError("no runs to aggregate")
    mean = float(np.mean(scores))
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return mean, std


def write_aggregate(name: str, results: "Sequence[RunResult]", path,
                    ensemble_scores: "Sequence[float] | None" = None) -> None:
    """Aggregate TSV: one row per reported quantity as mean +/- std over seeds."""
    mean, std = aggregate_results(results)
    lines = ["name\tn\tmean\tstd", f"{name}\t{len(results)}\t{mean:.6f}\t{std:.6f}"]
    if ensemble_scores is not None:
        e_mean = float(np.mean(ensemble_scores))
        e_std = float(np.std(ensemble_scores, ddof=1)) if len(ensemble_scores) > 1 else 0.0
        lines.append(f"{name}-ensemble\t{len(ensemble_scores)}\t{e_mean:.6f}\t{e_std:.6f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def carve_validation(train: list, seed: int, fraction: float = 0.2):
    """Deterministically split off floor(fraction * n) examples for validation."""
    order = np.random.default_rng([seed, 97]).permutation(len(train))
    n_val = int(fraction * len(train))
    val = [train[i] for i in order[:n_val]]
    rest = [train[i] for i in order[n_val:]]
    return rest, val


def adapt_params(pretrained: ParameterStore | None, config: md.ModelConfig, seed: int) -> ParameterStore:
    """Parameter store for ``config``: pretrained tensors where available,
    fresh initialization (same seeding scheme) elsewhere."""
    store = ParameterStore()
    fresh = md.init_params(config, seed)
    for name in md.named_shapes(config):
        if pretrained is not None and name in pretrained:
            store.add(name, pretrained[name].data.copy())
        else:
            store.add(name, fresh[name].data)
    return store


def train_task_model(
    task: TaskSpec,
    train: list[TaskExample],
    config: md.ModelConfig,
    seed: int,
    *,
    pretrained: ParameterStore | None = None,
    val: list[TaskExample] | None = None,
    vocab: wp.WordpieceVocab | None = None,
    epochs: int = 15,
    batch_size: int = 32,
    lr: float = 3e-5,
    warmup_fraction: float = 0.1,
    weight_decay: float = 0.1,
) -> tuple[ParameterStore, md.ModelConfig, list[float], int]:
    """Train with per-epoch validation and keep the best-validation snapshot.

    Returns (best_params, task_config, val_scores, best_epoch).  Ties keep
    the earlier epoch.  When no validation split is given, 20% of the
    training set (floor) is carved off deterministically.
    """
    if not train:
        raise ValueError("empty training set")
    config = config.with_heads((task.head,), num_labels=max(len(task.labels), 1))
    params = adapt_params(pretrained, config, seed)

    if val is None:
        train, val = carve_validation(train, seed)
        if not val:
            raise ValueError("training set too small to carve a validation split")

    shuffle_rng = np.random.default_rng([seed, 11])
    drop_rng = np.random.default_rng([seed, 12])
    state = OptimizerState()
    steps_per_epoch = (len(train) + batch_size - 1) // batch_size
    total_steps = epochs * steps_per_epoch

    best_score: float | None = None
    best_epoch = -1
    best_params = params.copy()
    val_scores: list[float] = []
    global_step = 0

    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train))
        for lo in range(0, len(order), batch_size):
            chunk = [train[i] for i in order[lo : lo + batch_size]]
            params.zero_grad()
            loss = batch_loss(task, chunk, config, params, vocab=vocab, train=True, rng=drop_rng)
            if not np.isfinite(float(loss.data)):
                raise ArithmeticError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            global_step += 1
            step_lr = lr_schedule(global_step, total_steps, lr, warmup_fraction)
            adam_step(params, params.grads(), state, step_lr, weight_decay=weight_decay)
        score = evaluate(task, val, config, params, vocab=vocab, batch_size=batch_size)
        val_scores.append(score)
        if best_score is None or score > best_score:
            best_score = score
            best_epoch = epoch
            best_params = params.copy()

    return best_params, config, val_scores, best_epoch


def finetune_run(
    task: TaskSpec,
    train: list[TaskExample],
    test: list[TaskExample],
    config: md.ModelConfig,
    seed: int,
    *,
    pretrained: ParameterStore | None = None,
    val: list[TaskExample] | None = None,
    vocab: wp.WordpieceVocab | None = None,
    epochs: int = 15,
    batch_size: int = 32,
    lr: float = 3e-5,
    warmup_fraction: float = 0.1,
    weight_decay: float = 0.1,
) -> tuple[RunResult, ParameterStore]:
    """Fine-tune on a task and report the test score of the best-validation epoch.

    Returns (result, best_params).  Deterministic for a fixed seed: the same
    seed yields identical RunResults and parameters.
    """
    best_params, task_config, val_scores, best_epoch = train_task_model(
        task, train, config, seed, pretrained=pretrained, val=val, vocab=vocab,
        epochs=epochs, batch_size=batch_size, lr=lr,
        warmup_fraction=warmup_fraction, weight_decay=weight_decay,
    )
    predictions = predict(task, test, task_config, params=best_params, vocab=vocab,
                          batch_size=batch_size)
    test_score = compute_metric(task, predictions, gold_values(task, test))
    result = RunResult(seed=seed, val_scores=val_scores, best_epoch=best_epoch,
                       test_score=test_score, predictions=predictions)
    return result, best_params
