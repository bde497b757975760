"""Tolerant identity and closeness testing for discrete distributions."""

from .distributions import Histogram, Pmf, make_uniform, zipf_pmf
from .rng import RngStream
from .tester import DEFAULT_C, Decision, Verdict, test_equivalence, test_identity

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_C", "Decision", "Histogram", "Pmf", "RngStream", "Verdict",
    "make_uniform", "test_equivalence", "test_identity", "zipf_pmf",
]
