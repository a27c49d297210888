"""The two orbifold crystal partition functions and their product forms.

Both models weigh a partition by a pair of Schur values at the p- and
r-specializations; the second model transposes the partition on the
r side.  Deformation by external potentials happens in the jet ring, so
every series coefficient is an exact polynomial in finitely many
coupling symbols.  The closed product form is evaluated through power
sums (exact); the MacMahon function itself is only ever resummed
numerically for cross-checks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import mpmath

from . import partitions, schur
from .scalars import (ApproxScalar, Context, Jet, JetSpec, QSeries, as_fraction,
                      coupling_symbols, jet_exp, mono_str, qpow)


class ModelKind(enum.Enum):
    FIRST = "first"    # pairs s_lam with s_lam (ordinary type)
    SECOND = "second"  # pairs s_lam with s_{transpose(lam)} (modified type)


def p_specialization(ctx: Context) -> schur.Specialization:
    return schur.Specialization(ctx.p)


def r_specialization(ctx: Context) -> schur.Specialization:
    return schur.Specialization(ctx.r)


def jet_spec_for(ctx: Context, model: ModelKind) -> JetSpec:
    n_tbar = ctx.jet_symbols if model is ModelKind.SECOND else 0
    return JetSpec(coupling_symbols(ctx.jet_symbols, n_tbar), ctx.jet_order)


@dataclass
class ZSeries:
    """Deformed partition function: Q-series with jet coefficients.

    The global Q-offset is s(s+1)/2; coefficient m counts configurations
    of weight m.
    """

    series: QSeries
    charge: int
    model: ModelKind


def z_series(ctx: Context, model: ModelKind, s: int = 0, jets: bool = True) -> ZSeries:
    """Partition sum over weights <= q_degree, exact coefficients."""
    model = ModelKind(model)
    pspec = p_specialization(ctx)
    rspec = r_specialization(ctx)
    jspec = jet_spec_for(ctx, model) if jets else None
    offset = s * (s + 1) // 2

    if jets:
        zero = Jet(jspec)
    else:
        zero = Fraction(0)
    coeffs = [zero] * (ctx.q_degree + 1)
    for lam in partitions.enumerate_partitions(ctx.q_degree):
        w1 = schur.schur(ctx, lam, pspec)
        lam_r = partitions.conjugate(lam) if model is ModelKind.SECOND else lam
        w2 = schur.schur(ctx, lam_r, rspec)
        coeff = w1 * w2
        if jets:
            arg = Jet(jspec)
            for k in range(1, ctx.jet_symbols + 1):
                arg = arg + Jet.variable(jspec, f"t{k}", partitions.phi(ctx, k, lam, s))
            if model is ModelKind.SECOND:
                for k in range(1, ctx.jet_symbols + 1):
                    arg = arg + Jet.variable(jspec, f"tb{k}", partitions.phi(ctx, -k, lam, s))
            coeff = jet_exp(arg) * coeff
        m = partitions.weight(lam)
        coeffs[m] = coeffs[m] + coeff
    return ZSeries(QSeries(coeffs, offset), s, model)


def product_series(ctx: Context, model: ModelKind) -> QSeries:
    """Closed form of the undeformed sum, via power sums.

    First model: exp(sum_k p_k(A) p_k(B) Q^k / k); second model carries
    the alternating sign (-1)^(k-1).  Equals the MacMahon double product
    as a formal series.
    """
    model = ModelKind(model)
    pspec = p_specialization(ctx)
    rspec = r_specialization(ctx)
    arg = [Fraction(0)] * (ctx.q_degree + 1)
    for k in range(1, ctx.q_degree + 1):
        c = schur.powersum(ctx, k, pspec) * schur.powersum(ctx, k, rspec) / k
        if model is ModelKind.SECOND and k % 2 == 0:
            c = -c
        arg[k] = c
    from .scalars import series_exp
    return series_exp(QSeries(arg, 0))


def macmahon(ctx: Context, x) -> ApproxScalar:
    """Truncated MacMahon value prod_{n<=tail_cutoff} (1 - x q^n)^(-n).

    Needs |q| < 1 and |x q| < 1; the neglected tail of the log is bounded
    and attached as `tail_bound` (an mpf) on the result.
    """
    ctx.require_approx_regime()
    x = as_fraction(x)
    q = ctx.q
    if not abs(x * q) < 1:
        raise ValueError(f"macmahon diverges: |x*q| = {abs(x * q)} >= 1")
    bits = ctx.precision_bits
    with mpmath.workprec(bits):
        xf = mpmath.mpf(x.numerator) / x.denominator
        qf = mpmath.mpf(q.numerator) / q.denominator
        acc = mpmath.mpf(1)
        qn = mpmath.mpf(1)
        for n in range(1, ctx.tail_cutoff + 1):
            qn *= qf
            acc *= (1 - xf * qn) ** (-n)
        # |log tail| <= sum_{n>N} n |x| |q|^n <= |x| |q|^{N+1} (N+1) / (1-|q|)^2
        n1 = ctx.tail_cutoff + 1
        bound = abs(xf) * abs(qf) ** n1 * n1 / (1 - abs(qf)) ** 2
    out = ApproxScalar(acc, bits)
    object.__setattr__(out, "tail_bound", bound)
    return out


def two_q_preset(ctx: Context) -> tuple:
    """Parameter lists that collapse the models to a two-q specialization.

    p_i = q^{(2i-1-a)/2a} and r_j = q^{(2j-1-b)/2b}; the union of the a
    (resp. b) scaled sequences is then the single sequence with ratio
    q^{1/a} (resp. q^{1/b}).
    """
    p = tuple(qpow(ctx, 2 * i - 1 - ctx.a, 2 * ctx.a) for i in range(1, ctx.a + 1))
    r = tuple(qpow(ctx, 2 * j - 1 - ctx.b, 2 * ctx.b) for j in range(1, ctx.b + 1))
    return p, r


def two_q_direct_series(ctx: Context, model: ModelKind) -> QSeries:
    """Independent evaluation of the two-q model via single-ratio h-values."""
    model = ModelKind(model)
    coeffs = [Fraction(0)] * (ctx.q_degree + 1)
    for lam in partitions.enumerate_partitions(ctx.q_degree):
        w1 = schur.schur_principal(ctx, lam, ctx.a)
        lam_r = partitions.conjugate(lam) if model is ModelKind.SECOND else lam
        w2 = schur.schur_principal(ctx, lam_r, ctx.b)
        coeffs[partitions.weight(lam)] += w1 * w2
    return QSeries(coeffs, 0)


def prefactor_ratio(ctx: Context, model: ModelKind, s: int = 0) -> Jet:
    """The coupling-dependent prefactor exp(sum_k (t_k q^k [- tbar_k])/(1-q^k)).

    Only this factor survives in ratio-normalized identity checks; the
    constant MacMahon and q-power pieces cancel.  The charge argument is
    kept for interface symmetry (the factor does not depend on it).
    """
    del s
    model = ModelKind(model)
    jspec = jet_spec_for(ctx, model)
    q = ctx.q
    arg = Jet(jspec)
    for k in range(1, ctx.jet_symbols + 1):
        arg = arg + Jet.variable(jspec, f"t{k}", q ** k / (1 - q ** k))
        if model is ModelKind.SECOND:
            arg = arg + Jet.variable(jspec, f"tb{k}", -1 / (1 - q ** k))
    return jet_exp(arg)


def zseries_table(zs: ZSeries) -> list:
    """Rows (absolute Q-exponent, jet monomial, coefficient string)."""
    rows = []
    for m, coeff in enumerate(zs.series.coeffs):
        e = zs.series.offset + m
        if isinstance(coeff, Jet):
            for expt in coeff.monomials():
                rows.append((e, mono_str(coeff.spec, expt), str(coeff.terms[expt])))
        else:
            rows.append((e, "1", str(coeff)))
    return rows
