"""Wordpiece vocabularies: learning, tokenization, fragmentation audits.

Vocabularies are learned with frequency BPE over within-word character
pairs; continuation pieces carry the "##" prefix.  Tokenization is greedy
longest match, left to right.  The fragmentation audit counts how many
pieces each corpus token splits into, at occurrence and type level.

Vocabulary file format: UTF-8 text, one piece per line, line number = id,
matching the common pretrained-vocabulary layout.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .fileio import atomic_write_text

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD, UNK, CLS, SEP, MASK = SPECIALS
CONTINUATION = "##"


@dataclass(frozen=True)
class WordpieceVocab:
    pieces: tuple[str, ...]

    def __post_init__(self):
        if self.pieces[: len(SPECIALS)] != SPECIALS:
            raise ValueError(f"vocabulary must start with the specials {SPECIALS}")
        if len(set(self.pieces)) != len(self.pieces):
            raise ValueError("vocabulary pieces must be unique")
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.pieces)})

    @property
    def size(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self._index

    def piece_id(self, piece: str) -> int:
        return self._index[piece]

    def id_to_piece(self, idx: int) -> str:
        return self.pieces[idx]

    @classmethod
    def from_pieces(cls, pieces: Iterable[str]) -> "WordpieceVocab":
        pieces = list(pieces)
        if pieces[: len(SPECIALS)] != list(SPECIALS):
            pieces = list(SPECIALS) + [p for p in pieces if p not in SPECIALS]
        return cls(tuple(pieces))

    def save(self, path) -> None:
        atomic_write_text(path, "".join(p + "\n" for p in self.pieces))

    @classmethod
    def load(cls, path) -> "WordpieceVocab":
        with open(path, encoding="utf-8") as f:
            pieces = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tuple(pieces))


def _word_symbols(word: str) -> tuple[str, ...]:
    """Initial symbol sequence of a word: first char bare, rest ##-prefixed."""
    return (word[0],) + tuple(CONTINUATION + c for c in word[1:])


def base_symbols(word_counts: Counter) -> list[str]:
    """Character inventory: every observed char in bare and ## form."""
    chars = sorted({c for w in word_counts for c in w})
    return chars + [CONTINUATION + c for c in chars]


def learn_vocab(corpus: Iterable[str], target_size: int, min_pair_freq: int = 1) -> WordpieceVocab:
    """Learn a wordpiece vocabulary by frequency BPE over a token stream.

    Merges the most frequent adjacent symbol pair within words until the
    vocabulary reaches target_size or the best pair frequency drops below
    min_pair_freq.  Ties break lexicographically on the pair, so learning is
    deterministic.
    """
    word_counts = Counter(t.lower() for t in corpus if t.strip())
    if not word_counts:
        raise ValueError("cannot learn a vocabulary from an empty corpus")

    base = base_symbols(word_counts)
    pieces = list(SPECIALS) + base
    if target_size < len(pieces):
        raise ValueError(
            f"target_size {target_size} below base inventory {len(pieces)} "
            "(specials plus observed characters in bare and ## form)"
        )

    words = {w: list(_word_symbols(w)) for w in word_counts}
    known = set(pieces)

    while len(pieces) < target_size:
        pair_counts: Counter = Counter()
        for w, symbols in words.items():
            n = word_counts[w]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] += n
        if not pair_counts:
            break
        best_pair, best_count = min(
            pair_counts.items(), key=lambda kv: (-kv[1], kv[0])
        )
        if best_count < min_pair_freq:
            break
        a, b = best_pair
        merged = a + b.removeprefix(CONTINUATION)
        for w, symbols in words.items():
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == a and symbols[i + 1] == b:
                    symbols[i : i + 2] = [merged]
                else:
                    i += 1
        if merged not in known:
            pieces.append(merged)
            known.add(merged)

    return WordpieceVocab(tuple(pieces))


def tokenize_word(vocab: WordpieceVocab, word: str, max_word_chars: int = 100) -> list[str]:
    """Split one word into pieces by greedy longest match, left to right.

    The first piece is matched bare, later pieces with the ## prefix.  If
    any position matches nothing, or the word exceeds max_word_chars, the
    whole word becomes [UNK].
    """
    if not word:
        raise ValueError("cannot tokenize an empty word")
    if len(word) > max_word_chars:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        prefix = CONTINUATION if start > 0 else ""
        end = len(word)
        match = None
        while end > start:
            candidate = prefix + word[start:end]
            if candidate in vocab:
                match = candidate
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def tokenize_words(vocab: WordpieceVocab, words: Iterable[str]) -> list[str]:
    """Tokenize a word stream; specials pass through unsplit."""
    out = []
    for w in words:
        if w in SPECIALS:
            out.append(w)
        else:
            out.extend(tokenize_word(vocab, w))
    return out


@dataclass
class FragmentationReport:
    occurrence_histogram: dict[int, int]
    type_histogram: dict[int, int]
    total_occurrences: int
    total_types: int
    unk_occurrences: int

    @property
    def unsplit_fraction(self) -> float:
        return self.occurrence_histogram.get(1, 0) / self.total_occurrences

    @property
    def mean_pieces_per_occurrence(self) -> float:
        weighted = sum(k * v for k, v in self.occurrence_histogram.items())
        return weighted / self.total_occurrences

    def to_json(self) -> str:
        payload = {
            "occurrence_histogram": {str(k): v for k, v in sorted(self.occurrence_histogram.items())},
            "type_histogram": {str(k): v for k, v in sorted(self.type_histogram.items())},
            "total_occurrences": self.total_occurrences,
            "total_types": self.total_types,
            "unk_occurrences": self.unk_occurrences,
            "unsplit_fraction": self.unsplit_fraction,
            "mean_pieces_per_occurrence": self.mean_pieces_per_occurrence,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_tsv(self) -> str:
        lines = ["pieces_per_token\toccurrences\ttypes"]
        for k in sorted(set(self.occurrence_histogram) | set(self.type_histogram)):
            lines.append(
                f"{k}\t{self.occurrence_histogram.get(k, 0)}\t{self.type_histogram.get(k, 0)}"
            )
        lines.append(f"unsplit_fraction\t{self.unsplit_fraction:.6f}\t")
        lines.append(f"mean_pieces_per_occurrence\t{self.mean_pieces_per_occurrence:.6f}\t")
        return "\n".join(lines) + "\n"


def analyze_fragmentation(vocab: WordpieceVocab, corpus: Iterable[str]) -> FragmentationReport:
    """Tokenize every occurrence and histogram pieces-per-token.

    [UNK] counts as a single piece (the token stays one unit); the report
    carries the [UNK] occurrence count separately.
    """
    occurrence_hist: Counter = Counter()
    type_hist: Counter = Counter()
    per_type: dict[str, tuple[int, bool]] = {}
    total = 0
    unk = 0
    for token in corpus:
        token = token.lower().strip()
        if not token:
            continue
        total += 1
        if token not in per_type:
            pieces = tokenize_word(vocab, token)
            per_type[token] = (len(pieces), pieces == [UNK])
            type_hist[len(pieces)] += 1
        n_pieces, is_unk = per_type[token]
        occurrence_hist[n_pieces] += 1
        if is_unk:
            unk += 1
    if total == 0:
        raise ValueError("cannot audit an empty corpus")
    return FragmentationReport(
        occurrence_histogram=dict(occurrence_hist),
        type_histogram=dict(type_hist),
        total_occurrences=total,
        total_types=len(per_type),
        unk_occurrences=unk,
    )
