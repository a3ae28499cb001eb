"""Streaming kernel regression with online-tuned regularization.

Anytime confidence envelopes, streaming noise bracketing and the Kernel UCB
and Kernel Thompson sampling agents built on them.
"""
from ._backend import BACKEND
from .kernel_core import KernelSpec, RkhsFunction, default_test_function, synth_test_function
from .linalg import NumericalError

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "KernelSpec",
    "NumericalError",
    "RkhsFunction",
    "default_test_function",
    "synth_test_function",
]
