"""Embedding-sample dispatch for parameter-server recommendation training."""
