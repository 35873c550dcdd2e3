"""Misspelling-robustness harness: score fine-tuned models across noise levels.

TEST_ONLY evaluates existing models on noisy copies of the test set;
ALL_SPLITS retrains on noisy train/validation and evaluates on the noisy
test.  Level 0 skips perturbation entirely, so the clean score is
reproduced bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import finetune as ft
from . import noise
from .fileio import atomic_write_text

TEST_ONLY = "TEST_ONLY"
ALL_SPLITS = "ALL_SPLITS"


@dataclass(frozen=True)
class NoiseConfig:
    level: float
    scope: str = TEST_ONLY
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"noise level must be in [0, 1], got {self.level}")
        if self.scope not in (TEST_ONLY, ALL_SPLITS):
            raise ValueError(f"unknown noise scope {self.scope!r}")


def perturb_example(ex: ft.TaskExample, level: float, rng: np.random.Generator) -> ft.TaskExample:
    """Perturb every token field of one example; labels are untouched."""
    if ex.tokens is not None:
        return replace(ex, tokens=noise.perturb_tokens(ex.tokens, level, rng))
    out = replace(ex, text_a=noise.perturb_text(ex.text_a, level, rng))
    if ex.text_b:
        out = replace(out, text_b=noise.perturb_text(ex.text_b, level, rng))
    return out


def perturb_examples(examples: Sequence[ft.TaskExample], level: float,
                     rng: np.random.Generator) -> list[ft.TaskExample]:
    if level == 0.0:
        return list(examples)
    return [perturb_example(ex, level, rng) for ex in examples]


@dataclass
class CurveRow:
    model: str
    level: float
    scope: str
    score: float

    def tsv(self) -> str:
        return f"{self.model}\t{self.level:g}\t{self.scope}\t{self.score:.6f}"


def write_curve(rows: Sequence[CurveRow], path) -> None:
    text = "model\tlevel\tscope\tscore\n" + "".join(r.tsv() + "\n" for r in rows)
    atomic_write_text(path, text)


def robustness_curve(
    models: dict,
    task: ft.TaskSpec,
    test: Sequence[ft.TaskExample],
    levels: Sequence[float],
    scope: str = TEST_ONLY,
    noise_seed: int = 0,
    *,
    train: Sequence[ft.TaskExample] | None = None,
    val: Sequence[ft.TaskExample] | None = None,
    retrain: Callable | None = None,
) -> list[CurveRow]:
    """Score-vs-noise-level table, one row per (model, level, scope).

    TEST_ONLY: ``models`` maps name -> (params, config[, vocab]); each model
    is evaluated on a perturbed test copy per level.  ALL_SPLITS: ``retrain``
    maps (name, train, val) -> (params, config[, vocab]) and is called per
    level on perturbed splits.
    """
    if scope not in (TEST_ONLY, ALL_SPLITS):
        raise ValueError(f"unknown noise scope {scope!r}")
    if scope == ALL_SPLITS and (train is None or retrain is None):
        raise ValueError("ALL_SPLITS needs train examples and a retrain callable")
    for level in levels:
        NoiseConfig(level=level, scope=scope, seed=noise_seed)

    rows = []
    for name in models:
        for level in levels:
            rng = np.random.default_rng([noise_seed, int(round(level * 1000))])
            noisy_test = perturb_examples(test, level, rng)
            if scope == TEST_ONLY:
                entry = models[name]
            else:
                noisy_train = perturb_examples(train, level, rng)
                noisy_val = perturb_examples(val, level, rng) if val is not None else None
                entry = retrain(name, noisy_train, noisy_val)
            if len(entry) == 2:
                (params, config), vocab = entry, None
            else:
                params, config, vocab = entry
            score = ft.evaluate(task, noisy_test, config, params, vocab=vocab)
            rows.append(CurveRow(model=name, level=float(level), scope=scope, score=score))
    return rows
