"""Offline exporter: pretrained text encoder -> UFEC embedding cache."""

__version__ = "0.1.0"
