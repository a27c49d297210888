"""Integer partitions and the diagonal quantities attached to them.

A partition is a plain tuple of weakly decreasing positive ints; () is
the empty partition.  Trailing zeros are never stored, and every formula
below runs over i <= len(lam) with the tail folded into a closed form.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

from .scalars import Context


def check_partition(lam) -> tuple:
    lam = tuple(lam)
    if any(not isinstance(x, int) or x <= 0 for x in lam):
        raise ValueError(f"partition parts must be positive integers: {lam}")
    if any(lam[i] < lam[i + 1] for i in range(len(lam) - 1)):
        raise ValueError(f"parts must be weakly decreasing: {lam}")
    return lam


def weight(lam) -> int:
    return sum(lam)


@lru_cache(maxsize=None)
def _partitions_of(n: int, max_part: int) -> tuple:
    """All partitions of n with parts <= max_part, as descending tuples."""
    if n == 0:
        return ((),)
    out = []
    for first in range(min(n, max_part), 0, -1):
        for rest in _partitions_of(n - first, first):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def partitions_of_weight(n: int) -> tuple:
    """Partitions of n, sorted lexicographically ascending."""
    return tuple(sorted(_partitions_of(n, n)))


def enumerate_partitions(max_weight: int) -> list:
    """All partitions of weight <= max_weight, graded then lex ascending."""
    if max_weight < 0:
        raise ValueError("max_weight must be nonnegative")
    out = []
    for d in range(max_weight + 1):
        out.extend(partitions_of_weight(d))
    return out


def conjugate(lam) -> tuple:
    """Column transpose of the Young diagram."""
    if not lam:
        return ()
    out = []
    for j in range(lam[0]):
        out.append(sum(1 for part in lam if part > j))
    return tuple(out)


def kappa(lam) -> int:
    """Second Casimir sum((lam_i - i + 1/2)^2 - (-i + 1/2)^2), an even integer."""
    return sum(part * (part - 2 * i - 1) for i, part in enumerate(lam))


def phi(ctx: Context, k: int, lam, s: int) -> Fraction:
    """External potential attached to (lam, s) at index k != 0.

    Finite sum over the rows plus the closed tail q^k (1 - q^{ks})/(1 - q^k);
    exact for either sign of k and s.
    """
    if k == 0:
        raise ValueError("phi needs k != 0")
    q = ctx.q
    total = Fraction(0)
    for i, part in enumerate(lam):
        total += q ** (k * (part + s - i)) - q ** (k * (s - i))
    total += q ** k * (1 - q ** (k * s)) / (1 - q ** k)
    return total
