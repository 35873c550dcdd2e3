"""Character-CNN word embedder.

Maps a 50-slot character-id sequence to one context-independent word vector:
character embedding lookup, a bank of parallel valid-mode 1-d convolutions
(ReLU then max-over-time each), concatenation, two highway layers, and an
affine projection to the encoder width.

The canonical filter bank is [(1,32), (2,32), (3,64), (4,128), (5,256),
(6,512), (7,1024)] over 16-d character embeddings, giving a 2048-wide
concatenation; smaller banks are used for desk-scale configs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import charseq
from .autodiff import Tensor

CANONICAL_FILTERS = ((1, 32), (2, 32), (3, 64), (4, 128), (5, 256), (6, 512), (7, 1024))


@dataclass(frozen=True)
class CharCnnSpec:
    char_vocab: int = charseq.CHAR_VOCAB_SIZE
    max_chars: int = charseq.MAX_CHARS
    embed_dim: int = 16
    filters: tuple[tuple[int, int], ...] = CANONICAL_FILTERS
    highway_layers: int = 2

    def __post_init__(self):
        for width, count in self.filters:
            if width < 1 or count < 1:
                raise ValueError(f"bad filter ({width}, {count})")
            if width > self.max_chars:
                raise ValueError(f"filter width {width} exceeds max_chars {self.max_chars}")

    @property
    def concat_dim(self) -> int:
        return sum(count for _, count in self.filters)

    def to_dict(self) -> dict:
        return {
            "char_vocab": self.char_vocab,
            "max_chars": self.max_chars,
            "embed_dim": self.embed_dim,
            "filters": [list(f) for f in self.filters],
            "highway_layers": self.highway_layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CharCnnSpec":
        return cls(
            char_vocab=d["char_vocab"],
            max_chars=d["max_chars"],
            embed_dim=d["embed_dim"],
            filters=tuple(tuple(f) for f in d["filters"]),
            highway_layers=d["highway_layers"],
        )


def charcnn_shapes(spec: CharCnnSpec, output_dim: int, prefix: str = "charcnn.") -> dict[str, tuple]:
    """Named tensor shapes of the embedder, in creation order."""
    shapes: dict[str, tuple] = {}
    shapes[prefix + "char_embeddings"] = (spec.char_vocab, spec.embed_dim)
    for k, (width, count) in enumerate(spec.filters):
        shapes[prefix + f"conv{k}.weight"] = (count, width, spec.embed_dim)
        shapes[prefix + f"conv{k}.bias"] = (count,)
    d = spec.concat_dim
    for i in range(spec.highway_layers):
        shapes[prefix + f"highway{i}.transform.weight"] = (d, d)
        shapes[prefix + f"highway{i}.transform.bias"] = (d,)
        shapes[prefix + f"highway{i}.gate.weight"] = (d, d)
        shapes[prefix + f"highway{i}.gate.bias"] = (d,)
    shapes[prefix + "projection.weight"] = (d, output_dim)
    shapes[prefix + "projection.bias"] = (output_dim,)
    return shapes


def charcnn_param_count(spec: CharCnnSpec, output_dim: int) -> int:
    """Total learnable scalars: sum of shape products over all named tensors."""
    return sum(int(np.prod(s)) for s in charcnn_shapes(spec, output_dim).values())


def highway(x: Tensor, transform_w: Tensor, transform_b: Tensor, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """Gated residual transform: g*relu(Wt x + bt) + (1-g)*x, g = sigmoid(Wg x + bg)."""
    g = ad.sigmoid(ad.add(ad.matmul(x, gate_w), gate_b))
    t = ad.relu(ad.add(ad.matmul(x, transform_w), transform_b))
    one_minus_g = ad.add_scalar(ad.scale(g, -1.0), 1.0)
    return ad.add(ad.mul(g, t), ad.mul(one_minus_g, x))


def embed_char_ids(
    char_ids: np.ndarray,
    params,
    spec: CharCnnSpec,
    prefix: str = "charcnn.",
) -> Tensor:
    """Embed a batch of character-id sequences: (M, max_chars) int -> (M, output_dim).

    Convolutions run valid-mode over the full slot sequence, pads included;
    pad positions contribute their learned embedding (no masking before the
    max-pool).
    """
    char_ids = np.asarray(char_ids)
    if char_ids.ndim != 2 or char_ids.shape[1] != spec.max_chars:
        raise ValueError(f"char_ids must be (M, {spec.max_chars}), got {char_ids.shape}")
    embedded = ad.embedding_lookup(params[prefix + "char_embeddings"], char_ids)
    pooled = []
    for k in range(len(spec.filters)):
        conv = ad.conv1d_valid(
            embedded, params[prefix + f"conv{k}.weight"], params[prefix + f"conv{k}.bias"]
        )
        pooled.append(ad.max_over_time(ad.relu(conv)))
    x = ad.concat(pooled, axis=-1)
    for i in range(spec.highway_layers):
        x = highway(
            x,
            params[prefix + f"highway{i}.transform.weight"],
            params[prefix + f"highway{i}.transform.bias"],
            params[prefix + f"highway{i}.gate.weight"],
            params[prefix + f"highway{i}.gate.bias"],
        )
    return ad.add(ad.matmul(x, params[prefix + "projection.weight"]), params[prefix + "projection.bias"])


def embed_token(chars: np.ndarray, params, spec: CharCnnSpec, prefix: str = "charcnn.") -> Tensor:
    """Embed a single validated character sequence: (max_chars,) -> (output_dim,)."""
    charseq.validate_charseq(chars)
    out = embed_char_ids(np.asarray(chars).reshape(1, -1), params, spec, prefix=prefix)
    return ad.reshape(out, (out.shape[-1],))
