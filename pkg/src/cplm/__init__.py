"""Train small language models under growing working-memory schedules and
evaluate them on minimal-pair grammaticality benchmarks."""

__version__ = "0.1.0"
