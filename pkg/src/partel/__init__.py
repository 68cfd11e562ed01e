"""Latency-minimizing resource allocation for partitioned edge learning."""
