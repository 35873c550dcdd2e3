"""wordenc: a dual-frontend contextual word encoder lab.

Two interchangeable frontends over one transformer encoder: a character-CNN
that embeds each word from its byte sequence, and a wordpiece lookup over a
learned subword vocabulary.  Includes the pretraining (masked-word +
next-sentence) and fine-tuning protocols, a tokenization-fragmentation
audit, majority-vote ensembling, a misspelling-robustness harness, and a
finite-difference gradient checker for the whole stack.
"""

from .autodiff import Tensor
from .charcnn import CharCnnSpec, charcnn_param_count
from .gradcheck import grad_check
from .model import ModelConfig, base_config, count_parameters, init_params, tiny_config
from .params import ParameterStore
from .wordpiece import WordpieceVocab, analyze_fragmentation, learn_vocab, tokenize_word

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "CharCnnSpec",
    "charcnn_param_count",
    "grad_check",
    "ModelConfig",
    "base_config",
    "tiny_config",
    "count_parameters",
    "init_params",
    "ParameterStore",
    "WordpieceVocab",
    "learn_vocab",
    "tokenize_word",
    "analyze_fragmentation",
    "__version__",
]
