"""Exact Schur and skew-Schur values.

The specializations of interest are unions of geometric sequences
x_i * (q^{1/2}, q^{3/2}, ...); for those the complete homogeneous
symmetric functions have the closed one-scale form

    h_n(x q^{1/2}, x q^{3/2}, ...) = x^n q^{n/2} / ((1-q)...(1-q^n)),

and unions convolve.  Schur values then come out of the Jacobi-Trudi
determinant, which is the only route that terminates on an infinite
variable set.  Tableau enumeration survives only in test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .scalars import Context, as_fraction, qpow


@dataclass(frozen=True)
class Specialization:
    """Union over `scales` of the geometric sequences x * (q^{1/2}, q^{3/2}, ...)."""

    scales: tuple

    def __init__(self, scales):
        scales = tuple(as_fraction(x) for x in scales)
        if any(x == 0 for x in scales):
            raise ValueError("specialization scales must be nonzero")
        object.__setattr__(self, "scales", scales)

    def scaled(self, c) -> "Specialization":
        c = as_fraction(c)
        return Specialization(tuple(x * c for x in self.scales))


def _one_scale_h(ctx: Context, x: Fraction, n_max: int) -> list:
    """h_0..h_n for the single sequence x q^{1/2}, x q^{3/2}, ..."""
    q = ctx.q
    root_q = qpow(ctx, 1, 2)
    out = [Fraction(1)]
    num = Fraction(1)
    den = Fraction(1)
    for n in range(1, n_max + 1):
        num *= x * root_q
        den *= 1 - q ** n
        out.append(num / den)
    return out


def _convolve(a: list, b: list, n_max: int) -> list:
    out = [Fraction(0)] * (n_max + 1)
    for i, ai in enumerate(a):
        if i > n_max or not ai:
            continue
        for j in range(min(len(b), n_max + 1 - i)):
            if b[j]:
                out[i + j] += ai * b[j]
    return out


def h_values(ctx: Context, spec: Specialization, n_max: int) -> list:
    """h_0..h_{n_max} at the specialization, memoized per context."""
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    key = ("h", spec.scales)
    cached = ctx._memo.get(key)
    if cached is None or len(cached) <= n_max:
        need = max(n_max, 2 * len(cached or ()) or 8)
        acc = [Fraction(1)]
        for x in spec.scales:
            acc = _convolve(acc, _one_scale_h(ctx, x, need), need)
        cached = acc
        ctx._memo[key] = cached
    return cached[: n_max + 1]


def principal_h_values(ctx: Context, denom: int, n_max: int) -> list:
    """h_0..h_{n_max} for the sequence (q^{1/2d}, q^{3/2d}, ...), d = denom.

    Same one-scale closed form with q replaced by q^{1/d}; the exponents
    stay integer powers of the uniformizer as long as d divides 2ab.
    This is the independent route used to cross-check the two-q preset.
    """
    out = [Fraction(1)]
    num = Fraction(1)
    den = Fraction(1)
    for n in range(1, n_max + 1):
        num *= qpow(ctx, 1, 2 * denom)
        den *= 1 - qpow(ctx, n, denom)
        out.append(num / den)
    return out


def h_values_finite(xs, n_max: int) -> list:
    """h_0..h_{n_max} of a finite variable list."""
    acc = [Fraction(1)] + [Fraction(0)] * n_max
    for x in xs:
        x = as_fraction(x)
        geo = [x ** n for n in range(n_max + 1)]
        acc = _convolve(acc, geo, n_max)
    return acc


def powersum(ctx: Context, k: int, spec: Specialization) -> Fraction:
    """p_k at the specialization: sum_i x_i^k q^{k/2} / (1 - q^k)."""
    if k < 1:
        raise ValueError("powersum needs k >= 1")
    q = ctx.q
    base = qpow(ctx, k, 2) / (1 - q ** k)
    return sum((x ** k for x in spec.scales), Fraction(0)) * base


def _det(rows) -> Fraction:
    """Fraction-free (Bareiss) determinant of a small square matrix."""
    m = [list(r) for r in rows]
    n = len(m)
    if n == 0:
        return Fraction(1)
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if not m[k][k]:
            for i in range(k + 1, n):
                if m[i][k]:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return Fraction(0)
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def _jacobi_trudi(h: list, lam, mu=()) -> Fraction:
    ln = len(lam)
    if ln == 0:
        return Fraction(1)
    mu = tuple(mu) + (0,) * (ln - len(mu))

    def entry(i, j):
        idx = lam[i] - mu[j] - i + j
        if idx < 0 or idx >= len(h):
            return Fraction(0)
        return h[idx]

    return _det([[entry(i, j) for j in range(ln)] for i in range(ln)])


def schur(ctx: Context, lam, spec: Specialization) -> Fraction:
    """Schur value at the specialization via Jacobi-Trudi."""
    lam = tuple(lam)
    if not lam:
        return Fraction(1)
    h = h_values(ctx, spec, lam[0] + len(lam) - 1)
    return _jacobi_trudi(h, lam)


def schur_principal(ctx: Context, lam, denom: int) -> Fraction:
    """Schur value at (q^{1/2d}, q^{3/2d}, ...) for d = denom."""
    lam = tuple(lam)
    if not lam:
        return Fraction(1)
    h = principal_h_values(ctx, denom, lam[0] + len(lam) - 1)
    return _jacobi_trudi(h, lam)


def skew_schur(ctx: Context, lam, mu, xs) -> Fraction:
    """Skew Schur value on a finite variable list; 0 unless mu fits in lam."""
    lam, mu = tuple(lam), tuple(mu)
    if len(mu) > len(lam) or any(mu[i] > lam[i] for i in range(len(mu))):
        return Fraction(0)
    if not lam:
        return Fraction(1)
    h = h_values_finite(xs, lam[0] + len(lam) - 1)
    return _jacobi_trudi(h, lam, mu)


def schur_finite(ctx: Context, lam, xs) -> Fraction:
    """Schur value on a finite variable list (skew with empty inner shape)."""
    return skew_schur(ctx, lam, (), xs)
