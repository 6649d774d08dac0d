"""Benchmark harness: task streams, strategy runners, reports, CLI."""
