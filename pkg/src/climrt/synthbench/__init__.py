"""Synthetic sequences, one-pass evaluation, and experiment tables."""
