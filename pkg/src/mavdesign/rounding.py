"""Efficient rounding of approximate designs to integer replication counts."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .models import Design


def efficient_round(design: Design, n: int) -> list:
    """Integer counts ``n_i`` with ``sum(n_i) == n`` and every ``n_i >= 1``.

    Starts from ``ceil((n - k/2) * w_i)`` and adjusts one unit at a time:
    while the total is short, increment the point maximizing ``w_j / n_j``
    (smallest index on ties); while it is over, decrement the point
    minimizing ``w_j / (n_j - 1)`` among those with ``n_j >= 2`` (largest
    index on ties).

    Examples
    --------
    >>> efficient_round(Design((0.0, 1.0), (0.5, 0.5)), 4)
    [2, 2]
    """
    k = design.k
    if int(n) != n:
        raise ValidationError(f"n must be an integer, got {n}")
    n = int(n)
    if n < k:
        raise ValidationError(f"n = {n} is smaller than the number of support points k = {k}")
    w = design.w
    counts = [max(1, math.ceil((n - k / 2.0) * wi)) for wi in w]
    total = sum(counts)
    while total < n:
        ratios = w / np.asarray(counts, dtype=float)
        j = int(np.argmax(ratios))  # first maximum
        counts[j] += 1
        total += 1
    while total > n:
        best, j_best = math.inf, -1
        for j in range(k):
            if counts[j] >= 2:
                r = w[j] / (counts[j] - 1)
                if r <= best:  # later index wins ties
                    best, j_best = r, j
        counts[j_best] -= 1
        total -= 1
    return counts
