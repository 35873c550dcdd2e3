"""Task metrics: exact-span micro-F1 over BIO tags, accuracy, micro-F1 over
positive classes, and Pearson correlation."""

from __future__ import annotations

import math
from typing import Sequence


def bio_spans(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Decode BIO tags into (type, start, end) spans, end exclusive.

    An I- tag that does not continue a same-type span starts a new one
    (conlleval-compatible leniency).
    """
    spans = set()
    current = None  # (type, start)
    for i, tag in enumerate(tags):
        if tag == "O" or tag == "":
            if current:
                spans.add((current[0], current[1], i))
                current = None
            continue
        if "-" in tag:
            prefix, kind = tag.split("-", 1)
        else:
            prefix, kind = "I", tag
        if prefix == "B" or current is None or current[0] != kind:
            if current:
                spans.add((current[0], current[1], i))
            current = (kind, i)
    if current:
        spans.add((current[0], current[1], len(tags)))
    return spans


def span_f1(predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]) -> float:
    """Exact-match micro-F1 over decoded spans; zero predictions give 0."""
    if len(predicted) != len(gold) or any(len(p) != len(g) for p, g in zip(predicted, gold)):
        raise ValueError("prediction and gold tag sequences must align")
    tp = fp = fn = 0
    for pred_tags, gold_tags in zip(predicted, gold):
        p = bio_spans(pred_tags)
        g = bio_spans(gold_tags)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def accuracy(predicted: Sequence, gold: Sequence) -> float:
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lengths differ")
    if not gold:
        raise ValueError("empty evaluation set")
    return sum(p == g for p, g in zip(predicted, gold)) / len(gold)


def micro_f1_positive(predicted: Sequence[str], gold: Sequence[str], negative_label: str) -> float:
    """Micro-F1 pooled over every class except the negative one."""
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lengths differ")
    tp = fp = fn = 0
    for p, g in zip(predicted, gold):
        if p != negative_label:
            if p == g:
                tp += 1
            else:
                fp += 1
        if g != negative_label and p != g:
            fn += 1
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def pearson(predicted: Sequence[float], gold: Sequence[float]) -> float:
    """Pearson correlation; nan when either side has zero variance."""
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lengths differ")
    n = len(gold)
    if n < 2:
        return float("nan")
    mp = sum(predicted) / n
    mg = sum(gold) / n
    cov = sum((p - mp) * (g - mg) for p, g in zip(predicted, gold))
    vp = sum((p - mp) ** 2 for p in predicted)
    vg = sum((g - mg) ** 2 for g in gold)
    if vp == 0.0 or vg == 0.0:
        return float("nan")
    return cov / math.sqrt(vp * vg)
