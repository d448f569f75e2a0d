"""Workload driver, verify runner and command-line entry point."""

from .driver import BenchReport, BenchSpec, run_bench, run_verify
from .workloads import WORKLOADS
