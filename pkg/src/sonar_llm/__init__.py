"""Sentence-embedding language modelling with cross-entropy through a frozen decoder."""
