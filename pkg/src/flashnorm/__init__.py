"""Exact normalization-fusion rewrites for transformer fragments, with an
equivalence harness, operation counts and a vector/matrix-unit timing model."""

from flashnorm.model import Model, forward, generate, load, save
from flashnorm.passes import PassReport, run_pipeline
from flashnorm.timing import TimingParams, simulate
from flashnorm.verify import compare, count_ops

__version__ = "0.1.0"
