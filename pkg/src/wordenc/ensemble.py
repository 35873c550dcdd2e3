"""Majority-vote ensembling over independently seeded runs.

Classification and tagging take the modal label per example (per token for
tagging); ties break to the label earliest in the task's declared order.
Regression averages the predicted scores.  The leave-one-seed-out protocol
turns N runs into N ensembles of N-1 members each.
"""

from __future__ import annotations

from typing import Sequence

from .finetune import KIND_PAIR_SCORE, KIND_TOKEN_TAG, TaskSpec


def _vote(labels: Sequence[str], order: Sequence[str]) -> str:
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    tied = [lab for lab, c in counts.items() if c == best]
    if len(tied) == 1:
        return tied[0]
    for lab in order:
        if lab in tied:
            return lab
    return sorted(tied)[0]


def ensemble_predict(member_predictions: Sequence[list], task: TaskSpec) -> list:
    """Combine aligned member predictions into one prediction list."""
    if len(member_predictions) < 2:
        raise ValueError("an ensemble needs at least two members")
    n = len(member_predictions[0])
    if any(len(p) != n for p in member_predictions):
        raise ValueError("member predictions cover different test sets")

    if task.kind == KIND_PAIR_SCORE:
        return [sum(p[i] for p in member_predictions) / len(member_predictions) for i in range(n)]

    if task.kind == KIND_TOKEN_TAG:
        out = []
        for i in range(n):
            rows = [p[i] for p in member_predictions]
            length = len(rows[0])
            if any(len(r) != length for r in rows):
                raise ValueError("member tag sequences differ in length")
            out.append([_vote([r[j] for r in rows], task.labels) for j in range(length)])
        return out

    return [_vote([p[i] for p in member_predictions], task.labels) for i in range(n)]


def leave_one_out_ensembles(member_predictions: Sequence[list], task: TaskSpec) -> list[list]:
    """One ensemble per excluded member: N runs -> N ensembles of N-1."""
    if len(member_predictions) < 3:
        raise ValueError("leave-one-out needs at least three members")
    out = []
    for skip in range(len(member_predictions)):
        members = [p for i, p in enumerate(member_predictions) if i != skip]
        out.append(ensemble_predict(members, task))
    return out
