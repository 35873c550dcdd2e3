"""Shared transformer encoder with two swappable word frontends.

The character frontend embeds each word with the Char-CNN, giving exactly
one vector per input word.  The wordpiece frontend tokenizes words into
pieces and embeds each piece from a lookup table, so the sequence grows with
fragmentation.  Both feed the same stack: learned position and segment
embeddings, L post-layer-norm transformer layers (multi-head self-attention,
GELU feed-forward), and task heads on top.

Head layout follows the base bidirectional-encoder conventions: a tanh
pooler over the first position for sentence-level heads, a GELU+layer-norm
transform before the MLM decoder, weight tying between the wordpiece
embedding table and the MLM decoder (character mode instead uses an untied
decoder over a top-K word vocabulary chosen at pretraining time).

Checkpoint tensor naming: frontend.*, encoder.layer{i}.*, pooler.*, heads.*.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import charseq
from . import wordpiece as wp
from .autodiff import MASK_BIAS, Tensor
from .charcnn import CharCnnSpec, charcnn_shapes, embed_char_ids
from .params import ParameterStore

CHARACTER = "character"
WORDPIECE = "wordpiece"

HEAD_MLM = "mlm"
HEAD_NSP = "nsp"
HEAD_TOKEN_TAG = "token_tag"
HEAD_PAIR_CLASS = "pair_class"
HEAD_PAIR_SCORE = "pair_score"
KNOWN_HEADS = (HEAD_MLM, HEAD_NSP, HEAD_TOKEN_TAG, HEAD_PAIR_CLASS, HEAD_PAIR_SCORE)
POOLED_HEADS = (HEAD_NSP, HEAD_PAIR_CLASS, HEAD_PAIR_SCORE)

BASE_WORDPIECE_VOCAB = 30522


@dataclass(frozen=True)
class ModelConfig:
    mode: str
    layers: int = 12
    heads: int = 12
    hidden: int = 768
    ffn: int = 3072
    max_positions: int = 512
    type_vocab: int = 2
    dropout: float = 0.1
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02
    vocab_size: int | None = None       # wordpiece mode: piece inventory size
    mlm_vocab_size: int | None = None   # character mode: top-K MLM target words
    charcnn: CharCnnSpec | None = None  # character mode frontend
    attach_heads: tuple[str, ...] = ()
    num_labels: int = 0                 # token_tag / pair_class label count

    def __post_init__(self):
        if self.mode not in (CHARACTER, WORDPIECE):
            raise ValueError(f"mode must be {CHARACTER!r} or {WORDPIECE!r}, got {self.mode!r}")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.mode == WORDPIECE:
            if not self.vocab_size:
                raise ValueError("wordpiece mode needs vocab_size")
            if self.mlm_vocab_size is not None:
                raise ValueError("wordpiece mode ties the MLM decoder to the piece table; "
                                 "mlm_vocab_size only applies in character mode")
        else:
            if self.charcnn is None:
                raise ValueError("character mode needs a charcnn spec")
        for head in self.attach_heads:
            if head not in KNOWN_HEADS:
                raise ValueError(f"unknown head {head!r}")
        if HEAD_TOKEN_TAG in self.attach_heads or HEAD_PAIR_CLASS in self.attach_heads:
            if self.num_labels < 1:
                raise ValueError("token_tag / pair_class heads need num_labels >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def needs_pooler(self) -> bool:
        return any(h in self.attach_heads for h in POOLED_HEADS)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "layers": self.layers,
            "heads": self.heads,
            "hidden": self.hidden,
            "ffn": self.ffn,
            "max_positions": self.max_positions,
            "type_vocab": self.type_vocab,
            "dropout": self.dropout,
            "layer_norm_eps": self.layer_norm_eps,
            "init_std": self.init_std,
            "vocab_size": self.vocab_size,
            "mlm_vocab_size": self.mlm_vocab_size,
            "charcnn": self.charcnn.to_dict() if self.charcnn else None,
            "attach_heads": list(self.attach_heads),
            "num_labels": self.num_labels,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            mode=d["mode"],
            layers=d["layers"],
            heads=d["heads"],
            hidden=d["hidden"],
            ffn=d["ffn"],
            max_positions=d["max_positions"],
            type_vocab=d["type_vocab"],
            dropout=d["dropout"],
            layer_norm_eps=d["layer_norm_eps"],
            init_std=d.get("init_std", 0.02),
            vocab_size=d["vocab_size"],
            mlm_vocab_size=d["mlm_vocab_size"],
            charcnn=CharCnnSpec.from_dict(d["charcnn"]) if d["charcnn"] else None,
            attach_heads=tuple(d["attach_heads"]),
            num_labels=d["num_labels"],
        )

    def with_heads(self, heads: tuple[str, ...], num_labels: int = 0,
                   mlm_vocab_size: int | None = None) -> "ModelConfig":
        kwargs = {"attach_heads": heads, "num_labels": num_labels}
        if mlm_vocab_size is not None:
            kwargs["mlm_vocab_size"] = mlm_vocab_size
        return replace(self, **kwargs)


def base_config(mode: str) -> ModelConfig:
    """Base-uncased preset: 12 layers, 12 heads, 768 hidden."""
    if mode == WORDPIECE:
        return ModelConfig(mode=WORDPIECE, vocab_size=BASE_WORDPIECE_VOCAB,
                           attach_heads=(HEAD_MLM, HEAD_NSP))
    return ModelConfig(mode=CHARACTER, charcnn=CharCnnSpec(),
                       attach_heads=(HEAD_MLM, HEAD_NSP))


def tiny_config(mode: str, **overrides) -> ModelConfig:
    """Small desk-scale preset used by tests and demos."""
    defaults = dict(
        layers=2, heads=2, hidden=32, ffn=64, max_positions=64, dropout=0.0,
    )
    defaults.update(overrides)
    # small widths need a larger init scale than the base preset to train
    defaults.setdefault("init_std", 1.0 / np.sqrt(defaults["hidden"]))
    if mode == WORDPIECE:
        defaults.setdefault("vocab_size", 128)
        return ModelConfig(mode=WORDPIECE, **defaults)
    defaults.setdefault(
        "charcnn",
        CharCnnSpec(embed_dim=8, filters=((1, 8), (2, 8), (3, 16)), highway_layers=2),
    )
    return ModelConfig(mode=CHARACTER, **defaults)


# ---------------------------------------------------------------------------
# named tensors
# ---------------------------------------------------------------------------


def named_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Every learnable tensor of a model built from this config.

    The parameter count is a pure function of the config; nothing is
    allocated outside this map.
    """
    d = config.hidden
    shapes: dict[str, tuple] = {}
    if config.mode == WORDPIECE:
        shapes["frontend.word_embeddings"] = (config.vocab_size, d)
    else:
        shapes.update(charcnn_shapes(config.charcnn, d, prefix="frontend.charcnn."))
    shapes["frontend.position_embeddings"] = (config.max_positions, d)
    shapes["frontend.segment_embeddings"] = (config.type_vocab, d)
    shapes["frontend.layer_norm.gamma"] = (d,)
    shapes["frontend.layer_norm.beta"] = (d,)

    for i in range(config.layers):
        p = f"encoder.layer{i}."
        for proj in ("query", "key", "value"):
            shapes[p + f"attention.{proj}.weight"] = (d, d)
            shapes[p + f"attention.{proj}.bias"] = (d,)
        shapes[p + "attention.output.weight"] = (d, d)
        shapes[p + "attention.output.bias"] = (d,)
        shapes[p + "attention.layer_norm.gamma"] = (d,)
        shapes[p + "attention.layer_norm.beta"] = (d,)
        shapes[p + "ffn.intermediate.weight"] = (d, config.ffn)
        shapes[p + "ffn.intermediate.bias"] = (config.ffn,)
        shapes[p + "ffn.output.weight"] = (config.ffn, d)
        shapes[p + "ffn.output.bias"] = (d,)
        shapes[p + "ffn.layer_norm.gamma"] = (d,)
        shapes[p + "ffn.layer_norm.beta"] = (d,)

    if config.needs_pooler:
        shapes["pooler.dense.weight"] = (d, d)
        shapes["pooler.dense.bias"] = (d,)

    if HEAD_MLM in config.attach_heads:
        shapes["heads.mlm.transform.weight"] = (d, d)
        shapes["heads.mlm.transform.bias"] = (d,)
        shapes["heads.mlm.layer_norm.gamma"] = (d,)
        shapes["heads.mlm.layer_norm.beta"] = (d,)
        if config.mode == WORDPIECE:
            # decoder weight is tied to frontend.word_embeddings
            shapes["heads.mlm.decoder.bias"] = (config.vocab_size,)
        elif config.mlm_vocab_size:
            shapes["heads.mlm.decoder.weight"] = (d, config.mlm_vocab_size)
            shapes["heads.mlm.decoder.bias"] = (config.mlm_vocab_size,)
    if HEAD_NSP in config.attach_heads:
        shapes["heads.nsp.weight"] = (d, 2)
        shapes["heads.nsp.bias"] = (2,)
    if HEAD_TOKEN_TAG in config.attach_heads:
        shapes["heads.tagger.weight"] = (d, config.num_labels)
        shapes["heads.tagger.bias"] = (config.num_labels,)
    if HEAD_PAIR_CLASS in config.attach_heads:
        shapes["heads.classifier.weight"] = (d, config.num_labels)
        shapes["heads.classifier.bias"] = (config.num_labels,)
    if HEAD_PAIR_SCORE in config.attach_heads:
        shapes["heads.regressor.weight"] = (d, 1)
        shapes["heads.regressor.bias"] = (1,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Exact learnable-scalar total over the config's named tensors."""
    return sum(int(np.prod(s)) for s in named_shapes(config).values())


def _init_array(name: str, shape: tuple, rng: np.random.Generator, dtype,
                init_std: float = 0.02) -> np.ndarray:
    if name.endswith("layer_norm.gamma"):
        return np.ones(shape, dtype=dtype)
    if name.endswith("gate.bias"):
        # favor the identity path early
        return np.full(shape, -2.0, dtype=dtype)
    if name.endswith(".bias") or name.endswith("layer_norm.beta"):
        return np.zeros(shape, dtype=dtype)
    if name.endswith("char_embeddings"):
        return rng.standard_normal(shape).astype(dtype)
    if ".charcnn." in name or name.startswith("charcnn."):
        # Xavier uniform for conv / highway / projection weights
        if len(shape) == 3:
            fan_in = shape[1] * shape[2]
            fan_out = shape[0] * shape[1]
        else:
            fan_in, fan_out = shape[0], shape[1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)
    return (rng.standard_normal(shape) * init_std).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParameterStore:
    """Create and initialize all named tensors.

    Each tensor gets its own rng stream derived from (seed, crc32(name)),
    so initialization is independent of iteration order.
    """
    store = ParameterStore()
    for name, shape in named_shapes(config).items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        store.add(name, _init_array(name, shape, rng, dtype, config.init_std))
    return store


def init_head_params(config: ModelConfig, store: ParameterStore, seed: int, dtype=np.float32) -> None:
    """Add any tensors named by the config that the store is missing.

    Used when attaching a fresh task head to pretrained weights.
    """
    for name, shape in named_shapes(config).items():
        if name not in store:
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            store.add(name, _init_array(name, shape, rng, dtype, config.init_std))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


@dataclass
class EncodedBatch:
    """A batch prepared for (or produced by) the encoder."""

    vectors: Tensor                  # (B, N, d)
    attention_mask: np.ndarray       # (B, N) bool, True = real position
    alignments: list[list[tuple[int, int]]]  # per sequence: word -> [start, end) rows
    tokens: list[list[str]] = field(default_factory=list)


def expand_words(words: Sequence[str], segments: Sequence[int], vocab: wp.WordpieceVocab):
    """Wordpiece expansion of a word sequence: pieces, piece segments, spans."""
    pieces: list[str] = []
    piece_segments: list[int] = []
    spans: list[tuple[int, int]] = []
    for word, seg in zip(words, segments):
        if word in wp.SPECIALS:
            sub = [word]
        else:
            sub = wp.tokenize_word(vocab, word)
        spans.append((len(pieces), len(pieces) + len(sub)))
        pieces.extend(sub)
        piece_segments.extend([seg] * len(sub))
    return pieces, piece_segments, spans


def alignment_from_pieces(pieces: Sequence[str]) -> list[tuple[int, int]]:
    """Recover word spans from ## continuation prefixes."""
    spans = []
    for i, piece in enumerate(pieces):
        if piece.startswith(wp.CONTINUATION) and spans:
            start, _ = spans[-1]
            spans[-1] = (start, i + 1)
        else:
            spans.append((i, i + 1))
    return spans


def embed_batch(
    batch_tokens: list[list[str]],
    batch_segments: list[list[int]],
    config: ModelConfig,
    params: ParameterStore,
    *,
    vocab: wp.WordpieceVocab | None = None,
    pre_tokenized: bool = False,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> EncodedBatch:
    """Frontend + position/segment embeddings + layer norm + dropout.

    In character mode one row per word; in wordpiece mode one row per piece
    (words are tokenized here unless pre_tokenized).  Sequences are padded
    to the batch maximum with [PAD]; the attention mask marks real rows.
    """
    if len(batch_tokens) != len(batch_segments):
        raise ValueError("batch token and segment lists differ in length")
    if config.mode == WORDPIECE and vocab is None:
        raise ValueError("wordpiece mode needs a vocabulary")

    expanded: list[list[str]] = []
    expanded_segments: list[list[int]] = []
    alignments: list[list[tuple[int, int]]] = []
    for tokens, segments in zip(batch_tokens, batch_segments):
        if len(tokens) != len(segments):
            raise ValueError("token/segment length mismatch")
        if any(s not in (0, 1) for s in segments):
            raise ValueError("segment ids must be 0 or 1")
        if config.mode == WORDPIECE and not pre_tokenized:
            toks, segs, spans = expand_words(tokens, segments, vocab)
        else:
            toks, segs = list(tokens), list(segments)
            if config.mode == WORDPIECE:
                spans = alignment_from_pieces(toks)
            else:
                spans = [(i, i + 1) for i in range(len(toks))]
        if len(toks) > config.max_positions:
            raise ValueError(
                f"sequence of {len(toks)} rows exceeds max positions {config.max_positions}"
            )
        expanded.append(toks)
        expanded_segments.append(segs)
        alignments.append(spans)

    b = len(expanded)
    n = max(len(t) for t in expanded)
    mask = np.zeros((b, n), dtype=bool)
    seg_ids = np.zeros((b, n), dtype=np.int64)
    for i, (toks, segs) in enumerate(zip(expanded, expanded_segments)):
        mask[i, : len(toks)] = True
        seg_ids[i, : len(segs)] = segs

    if config.mode == WORDPIECE:
        ids = np.full((b, n), vocab.piece_id(wp.PAD), dtype=np.int64)
        unk_id = vocab.piece_id(wp.UNK)
        for i, toks in enumerate(expanded):
            for j, tok in enumerate(toks):
                ids[i, j] = vocab.piece_id(tok) if tok in vocab else unk_id
        token_vecs = ad.embedding_lookup(params["frontend.word_embeddings"], ids)
    else:
        char_ids = np.empty((b * n, config.charcnn.max_chars), dtype=np.int32)
        pad_seq = charseq.encode_special("PAD")
        for i, toks in enumerate(expanded):
            for j in range(n):
                if j < len(toks):
                    char_ids[i * n + j] = charseq.encode_token(toks[j])
                else:
                    char_ids[i * n + j] = pad_seq
        flat = embed_char_ids(char_ids, params, config.charcnn, prefix="frontend.charcnn.")
        token_vecs = ad.reshape(flat, (b, n, config.hidden))

    positions = np.broadcast_to(np.arange(n, dtype=np.int64), (b, n))
    pos_vecs = ad.embedding_lookup(params["frontend.position_embeddings"], positions)
    seg_vecs = ad.embedding_lookup(params["frontend.segment_embeddings"], seg_ids)
    x = ad.add(ad.add(token_vecs, pos_vecs), seg_vecs)
    x = ad.layer_norm(
        x, params["frontend.layer_norm.gamma"], params["frontend.layer_norm.beta"],
        config.layer_norm_eps,
    )
    x = ad.dropout(x, config.dropout, rng=rng, train=train)
    return EncodedBatch(vectors=x, attention_mask=mask, alignments=alignments, tokens=expanded)


def encode(
    x: Tensor,
    attention_mask: np.ndarray,
    config: ModelConfig,
    params: ParameterStore,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the transformer stack: (B, N, d) -> (B, N, d).

    Masked positions receive a large negative attention bias, so their
    columns underflow to exact zeros after softmax and cannot influence any
    unmasked row.
    """
    b, n, d = x.shape
    h, hd = config.heads, config.head_dim
    bias = np.where(attention_mask[:, None, None, :], 0.0, MASK_BIAS).astype(x.dtype)
    mask_bias = ad.constant(bias)
    inv_sqrt = 1.0 / np.sqrt(hd)

    for i in range(config.layers):
        p = f"encoder.layer{i}."

        def split_heads(t):
            return ad.transpose(ad.reshape(t, (b, n, h, hd)), (0, 2, 1, 3))

        q = split_heads(ad.add(ad.matmul(x, params[p + "attention.query.weight"]),
                               params[p + "attention.query.bias"]))
        k = split_heads(ad.add(ad.matmul(x, params[p + "attention.key.weight"]),
                               params[p + "attention.key.bias"]))
        v = split_heads(ad.add(ad.matmul(x, params[p + "attention.value.weight"]),
                               params[p + "attention.value.bias"]))
        scores = ad.add(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt), mask_bias)
        probs = ad.dropout(ad.softmax(scores, axis=-1), config.dropout, rng=rng, train=train)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, n, d))
        attn = ad.add(ad.matmul(ctx, params[p + "attention.output.weight"]),
                      params[p + "attention.output.bias"])
        attn = ad.dropout(attn, config.dropout, rng=rng, train=train)
        x = ad.layer_norm(
            ad.add(x, attn),
            params[p + "attention.layer_norm.gamma"], params[p + "attention.layer_norm.beta"],
            config.layer_norm_eps,
        )
        inner = ad.gelu(ad.add(ad.matmul(x, params[p + "ffn.intermediate.weight"]),
                               params[p + "ffn.intermediate.bias"]))
        ff = ad.add(ad.matmul(inner, params[p + "ffn.output.weight"]),
                    params[p + "ffn.output.bias"])
        ff = ad.dropout(ff, config.dropout, rng=rng, train=train)
        x = ad.layer_norm(
            ad.add(x, ff),
            params[p + "ffn.layer_norm.gamma"], params[p + "ffn.layer_norm.beta"],
            config.layer_norm_eps,
        )
    return x


def pool_first(encoded: Tensor, params: ParameterStore) -> Tensor:
    """tanh pooler over the first (classification) position: (B, N, d) -> (B, d)."""
    b, n, d = encoded.shape
    flat = ad.reshape(encoded, (b * n, d))
    first = ad.embedding_lookup(flat, np.arange(b) * n)
    return ad.tanh(ad.add(ad.matmul(first, params["pooler.dense.weight"]),
                          params["pooler.dense.bias"]))


def heads_forward(
    encoded: Tensor,
    alignments: list[list[tuple[int, int]]] | None,
    head: str,
    params: ParameterStore,
    config: ModelConfig,
    *,
    positions: np.ndarray | None = None,
) -> Tensor:
    """Task head logits/scores from encoder output.

    mlm: needs flat ``positions`` (row indices into the (B*N) flattening);
      returns (M, V) logits in wordpiece mode (tied decoder) or (M, K) in
      character mode (untied decoder).
    nsp / pair_class: (B, n_classes) logits from the pooled first position.
    pair_score: (B,) scalar scores from the pooled first position.
    token_tag: one logit row per original word (first-piece vector in
      wordpiece mode), concatenated over the batch.
    """
    if head not in config.attach_heads:
        raise ValueError(f"head {head!r} is not attached to this config")
    b, n, d = encoded.shape

    if head == HEAD_MLM:
        if positions is None:
            raise ValueError("mlm head needs masked positions")
        flat = ad.reshape(encoded, (b * n, d))
        rows = ad.embedding_lookup(flat, np.asarray(positions))
        h = ad.gelu(ad.add(ad.matmul(rows, params["heads.mlm.transform.weight"]),
                           params["heads.mlm.transform.bias"]))
        h = ad.layer_norm(h, params["heads.mlm.layer_norm.gamma"],
                          params["heads.mlm.layer_norm.beta"], config.layer_norm_eps)
        if config.mode == WORDPIECE:
            decoder = ad.transpose(params["frontend.word_embeddings"], (1, 0))
        else:
            if "heads.mlm.decoder.weight" not in params:
                raise ValueError("character-mode MLM decoder missing: set mlm_vocab_size")
            decoder = params["heads.mlm.decoder.weight"]
        return ad.add(ad.matmul(h, decoder), params["heads.mlm.decoder.bias"])

    if head == HEAD_NSP:
        pooled = pool_first(encoded, params)
        return ad.add(ad.matmul(pooled, params["heads.nsp.weight"]), params["heads.nsp.bias"])

    if head == HEAD_PAIR_CLASS:
        pooled = pool_first(encoded, params)
        return ad.add(ad.matmul(pooled, params["heads.classifier.weight"]),
                      params["heads.classifier.bias"])

    if head == HEAD_PAIR_SCORE:
        pooled = pool_first(encoded, params)
        out = ad.add(ad.matmul(pooled, params["heads.regressor.weight"]),
                     params["heads.regressor.bias"])
        return ad.reshape(out, (b,))

    if head == HEAD_TOKEN_TAG:
        if alignments is None:
            raise ValueError("token_tag head needs alignments")
        flat_idx = []
        for i, spans in enumerate(alignments):
            for start, _ in spans:
                flat_idx.append(i * n + start)
        flat = ad.reshape(encoded, (b * n, d))
        rows = ad.embedding_lookup(flat, np.asarray(flat_idx, dtype=np.int64))
        return ad.add(ad.matmul(rows, params["heads.tagger.weight"]), params["heads.tagger.bias"])

    raise ValueError(f"unknown head {head!r}")


@dataclass
class EncodedSequence:
    """Single-sequence view: one vector per row plus word alignment."""

    vectors: Tensor
    attention_mask: np.ndarray
    token_alignment: list[tuple[int, int]]


def embed_sequence(
    words: Sequence[str],
    segments: Sequence[int],
    config: ModelConfig,
    params: ParameterStore,
    *,
    vocab: wp.WordpieceVocab | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> EncodedSequence:
    """Single-sequence frontend embedding (batch of one internally)."""
    batch = embed_batch([list(words)], [list(segments)], config, params,
                        vocab=vocab, train=train, rng=rng)
    n, d = batch.vectors.shape[1], batch.vectors.shape[2]
    return EncodedSequence(
        vectors=ad.reshape(batch.vectors, (n, d)),
        attention_mask=batch.attention_mask[0],
        token_alignment=batch.alignments[0],
    )
