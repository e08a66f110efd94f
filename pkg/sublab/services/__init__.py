"""Use-case layer: corpus, training, mitigation, probes, similarity, harness, claims.

Services own the experiment logic; ``sublab.storage`` only reads and writes
files, and the CLI only parses arguments, calls a service and prints a result.
"""
