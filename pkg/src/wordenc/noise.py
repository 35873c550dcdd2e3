"""Misspelling noise: single-character edits applied per token.

One of four edits is drawn uniformly among those applicable: delete a
character, insert a character, replace a character, or swap two adjacent
characters.  Positions are uniform and inserted/replacement characters are
uniform over a-z (the pipeline is uncased).  Length-1 tokens only admit
insert and replace.
"""

from __future__ import annotations

import numpy as np

ALPHABET = "abcdefghijklmnopqrstuvwxyz"

EDIT_DELETE = "delete"
EDIT_INSERT = "insert"
EDIT_REPLACE = "replace"
EDIT_SWAP = "swap"


def perturb_token(token: str, rng: np.random.Generator) -> str:
    """Apply one uniformly drawn single-character edit to a token."""
    if len(token) < 1:
        raise ValueError("cannot perturb an empty token")
    if len(token) == 1:
        edits = (EDIT_INSERT, EDIT_REPLACE)
    else:
        edits = (EDIT_DELETE, EDIT_INSERT, EDIT_REPLACE, EDIT_SWAP)
    edit = edits[int(rng.integers(len(edits)))]
    if edit == EDIT_DELETE:
        i = int(rng.integers(len(token)))
        return token[:i] + token[i + 1:]
    if edit == EDIT_INSERT:
        i = int(rng.integers(len(token) + 1))
        c = ALPHABET[int(rng.integers(len(ALPHABET)))]
        return token[:i] + c + token[i:]
    if edit == EDIT_REPLACE:
        i = int(rng.integers(len(token)))
        c = ALPHABET[int(rng.integers(len(ALPHABET)))]
        return token[:i] + c + token[i + 1:]
    i = int(rng.integers(len(token) - 1))
    return token[:i] + token[i + 1] + token[i] + token[i + 2:]


def perturb_tokens(tokens: list[str], level: float, rng: np.random.Generator) -> list[str]:
    """Independently perturb each token with probability ``level``."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {level}")
    if level == 0.0:
        return list(tokens)
    return [perturb_token(t, rng) if rng.random() < level else t for t in tokens]


def perturb_text(text: str, level: float, rng: np.random.Generator) -> str:
    return " ".join(perturb_tokens(text.split(), level, rng))
