"""File-backed data access for corpora, checkpoints, matrices and reports.

Holds no experiment logic; every reader validates what it parses and raises
``StorageError`` on malformed input.
"""
