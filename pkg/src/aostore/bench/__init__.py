"""Benchmark harness: topologies, measurement scopes and reports."""
