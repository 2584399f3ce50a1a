"""trieval: generative document retrieval over docid prefix tries.

A corpus is encoded into short token-sequence document identifiers
(keyword, product-quantization, or atomic), an autoregressive scorer is
trained on text-to-docid pairs in three stages, and retrieval decodes
docids with beam search constrained to a prefix trie so that every
generated identifier names a real document.
"""

from trieval.errors import (
    ConfigError,
    CorpusError,
    DocidError,
    EvaluationError,
    ScorerError,
    TrainingError,
    TrieError,
    TrievalError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorpusError",
    "DocidError",
    "EvaluationError",
    "ScorerError",
    "TrainingError",
    "TrieError",
    "TrievalError",
    "__version__",
]
