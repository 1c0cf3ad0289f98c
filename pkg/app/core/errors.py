"""
Error types raised by the harness.
All of them are ValueErrors so callers that only care about bad input can keep
catching ValueError.
"""


class StreamError(ValueError):
    """Invalid windowing, ingest or partition request."""


class DetectorError(ValueError):
    """Detector precondition violated or detector failed mid-run."""


class EvaluationError(ValueError):
    """Metric undefined for the given input (single class, incomplete matrix, ...)."""
