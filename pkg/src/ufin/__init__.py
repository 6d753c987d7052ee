"""Multi-domain CTR prediction from text-derived universal features."""

__version__ = "0.1.0"
