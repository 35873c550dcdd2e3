"""Fixed-length byte-level character encoding of single tokens.

A token is lowercased, UTF-8 encoded, and laid out as

    [BOW, byte_1 .. byte_n (first 48 bytes), EOW, CHAR_PAD ...]

in a fixed 50-slot id sequence.  Ids 0-255 are raw byte values; seven
non-byte symbols (begin/end-of-word, pad, and codes for the four word-level
specials) bring the vocabulary to 263 ids.
"""

from __future__ import annotations

import numpy as np

BOW = 256
EOW = 257
CHAR_PAD = 258
CLS_CODE = 259
SEP_CODE = 260
MASK_CODE = 261
WORDPAD_CODE = 262

CHAR_VOCAB_SIZE = 263
MAX_CHARS = 50
MAX_CONTENT_BYTES = MAX_CHARS - 2  # BOW and EOW always present

SPECIAL_CODES = {
    "CLS": CLS_CODE,
    "SEP": SEP_CODE,
    "MASK": MASK_CODE,
    "PAD": WORDPAD_CODE,
}

# word-level special tokens as they appear in token streams
SPECIAL_TOKENS = {"[CLS]": "CLS", "[SEP]": "SEP", "[MASK]": "MASK", "[PAD]": "PAD"}


def _sequence(content: list[int]) -> np.ndarray:
    seq = np.full(MAX_CHARS, CHAR_PAD, dtype=np.int32)
    seq[0] = BOW
    seq[1 : 1 + len(content)] = content
    seq[1 + len(content)] = EOW
    return seq


def encode_word(token: str) -> np.ndarray:
    """Encode one token as a 50-slot character-id sequence.

    Input is lowercased before encoding (uncased pipeline); tokens longer
    than 48 UTF-8 bytes keep their first 48 bytes.
    """
    token = token.strip()
    if not token:
        raise ValueError("cannot encode an empty token")
    data = token.lower().encode("utf-8")[:MAX_CONTENT_BYTES]
    return _sequence(list(data))


def encode_special(symbol: str) -> np.ndarray:
    """Encode one of the word-level specials CLS/SEP/MASK/PAD."""
    key = symbol
    if key.startswith("[") and key.endswith("]"):
        key = key[1:-1]
    code = SPECIAL_CODES.get(key.upper())
    if code is None:
        raise ValueError(f"unknown special symbol {symbol!r}")
    return _sequence([code])


def encode_token(token: str) -> np.ndarray:
    """Dispatch: bracketed specials to their codes, everything else as a word."""
    special = SPECIAL_TOKENS.get(token)
    if special is not None:
        return encode_special(special)
    return encode_word(token)


def decode_word(seq: np.ndarray) -> str:
    """Recover the token text from a character-id sequence.

    Inverse of encode_word for tokens of at most 48 bytes; truncated
    multi-byte characters decode with replacement.
    """
    validate_charseq(seq)
    content = []
    for v in seq[1:]:
        if v == EOW:
            break
        content.append(int(v))
    if len(content) == 1 and content[0] in SPECIAL_CODES.values():
        for name, code in SPECIAL_CODES.items():
            if code == content[0]:
                return f"[{name}]"
    return bytes(content).decode("utf-8", errors="replace")


def validate_charseq(seq: np.ndarray) -> None:
    """Raise ValueError unless seq satisfies the fixed layout invariants."""
    seq = np.asarray(seq)
    if seq.shape != (MAX_CHARS,):
        raise ValueError(f"character sequence must have shape ({MAX_CHARS},), got {seq.shape}")
    if seq[0] != BOW:
        raise ValueError("character sequence must start with BOW")
    eow_positions = np.nonzero(seq == EOW)[0]
    if len(eow_positions) != 1:
        raise ValueError("character sequence must contain exactly one EOW")
    eow = eow_positions[0]
    if not np.all(seq[eow + 1 :] == CHAR_PAD):
        raise ValueError("all slots after EOW must be CHAR_PAD")
    body = seq[1:eow]
    if np.any(body == CHAR_PAD) or np.any(body == BOW):
        raise ValueError("content ids cannot include BOW or CHAR_PAD")
    if np.any(seq < 0) or np.any(seq >= CHAR_VOCAB_SIZE):
        raise ValueError("character id out of range")
