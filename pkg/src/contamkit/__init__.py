"""contamkit: exact and semantic duplicate auditing for LLM training corpora."""

__version__ = "0.1.0"
