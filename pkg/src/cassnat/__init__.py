"""CTC alignment-based single-step non-autoregressive transformer at toy scale."""

__version__ = "0.1.0"
