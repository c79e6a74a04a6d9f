"""Benchmark protocol and rank statistics."""

from .bench import BenchmarkTable, load_suite, run_benchmark
from .stats import average_rank, holm, one_sided_sign_test, pama, wilcoxon_holm, wilcoxon_signed_rank

__all__ = [
    "BenchmarkTable", "load_suite", "run_benchmark",
    "average_rank", "holm", "one_sided_sign_test", "pama", "wilcoxon_holm", "wilcoxon_signed_rank",
]
