"""Exception hierarchy shared across the pipeline."""


class TrievalError(Exception):
    """Base class for all domain errors raised by this package."""


class CorpusError(TrievalError):
    """Corpus file unusable: zero valid documents, duplicate keys, bad records."""


class DocidError(TrievalError):
    """A document identifier could not be constructed or violates uniqueness."""


class TrieError(TrievalError):
    """Prefix trie construction or lookup failed."""


class ScorerError(TrievalError):
    """Scorer configuration or training input is invalid."""


class TrainingError(TrievalError):
    """Training data generation or stage sequencing failed."""


class EvaluationError(TrievalError):
    """Metric computation or analysis input is unusable."""


class ConfigError(TrievalError):
    """Run configuration file or flag values are invalid."""
