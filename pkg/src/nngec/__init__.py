"""Phrase-based grammatical error correction with neural lexicon and joint-model features."""

__version__ = "0.1.0"
