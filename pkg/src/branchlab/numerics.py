"""Small numerical kernels used throughout the exact engine.

Everything here exists to avoid cancellation: probabilities close to
one are always carried as complements, sums of many small terms use
compensated accumulation, and differences of nearby transform values
are propagated as first-class quantities instead of being recomputed
by subtraction.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable


def neumaier_sum(values: Iterable[float]) -> float:
    """Compensated summation (Kahan with Neumaier's correction)."""
    total = 0.0
    carry = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            carry += (total - t) + v
        else:
            carry += (v - t) + total
        total = t
    return total + carry


def complement_product(survivals: Iterable[float]) -> float:
    """Stable evaluation of 1 - prod_j (1 - u_j) for u_j in [0, 1].

    Pairwise rule: 1 - (1-a)(1-b) = a + b(1-a).  Keeps full relative
    accuracy when every u_j is tiny, where forming the product first
    would lose everything to rounding.  A factor of exactly one must
    pin the result to exactly one: structural certainty of survival
    (deterministic offspring) may not decay into 0.999... noise.
    """
    acc = 0.0
    for u in survivals:
        if u >= 1.0:
            return 1.0
        acc = acc + u * (1.0 - acc)
    return min(acc, 1.0)


def power_complement(base_complement: float, k: int) -> float:
    """1 - (1 - d)^k without cancellation, for d in [0, 1], k >= 0."""
    if k == 0:
        return 0.0
    if base_complement >= 1.0:
        return 1.0
    return -math.expm1(k * math.log1p(-base_complement))


def power_diff(a: float, gap: float, k: int) -> float:
    """a^k - (a - gap)^k for 0 <= a - gap <= a <= 1, telescoped.

    Takes the gap itself, never the lower point: re-deriving it as a
    subtraction of nearby powers would throw away all its relative
    accuracy when the gap is tiny.  All summands are positive, so the
    result keeps the gap's precision.
    """
    if k == 0:
        return 0.0
    if k == 1:
        return gap
    b = max(a - gap, 0.0)
    # k stays small for the supported laws, so O(k^2) is irrelevant;
    # per-term powers avoid the underflow of a running b^(k-1).
    s = 0.0
    for t in range(k):
        s += a**t * b ** (k - 1 - t)
    return gap * s


def richardson_derivative(f: Callable[[float], float], x: float,
                          step: float) -> float:
    """d f / d x by central differences at spacings h and 2h.

    The two estimates are combined as (4 D_h - D_2h) / 3, cancelling
    the leading h^2 truncation term.
    """
    d1 = (f(x + step) - f(x - step)) / (2.0 * step)
    d2 = (f(x + 2.0 * step) - f(x - 2.0 * step)) / (4.0 * step)
    return (4.0 * d1 - d2) / 3.0
