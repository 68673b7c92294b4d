"""Exactly rounded summation of float arrays."""

import math

import numpy as np


def exact_sum(values):
    """``math.fsum`` of a float array (iterating a memoryview avoids a list copy)."""
    arr = np.ascontiguousarray(values, dtype=np.float64).ravel()
    return math.fsum(memoryview(arr))
