"""Location-sensitive knowledge graph embeddings (LSE / LSE_d) with TransE
and DistMult baselines: data loading, negative sampling, sparse-SGD training,
filtered link-prediction evaluation, and relation-pattern diagnostics."""

__version__ = "0.1.0"


class LsekgError(Exception):
    """Base class for errors raised by this package."""


class InputError(LsekgError):
    """Bad or missing input files / malformed records (CLI exit code 2)."""


class ConsistencyError(LsekgError):
    """Vocabulary, shape, or checkpoint consistency violation (exit code 3)."""
