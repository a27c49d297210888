"""Shared arithmetic: rationals over a q-uniformizer, truncated power
series in the box-counting variable Q, and coupling-constant jets.

Two regimes with a hard boundary:

* exact -- anything given by a finite sum lives in `fractions.Fraction`.
  Fractional powers of q never appear as such: a session fixes a rational
  uniformizer u and sets q = u**(2*a*b), so q**(1/2), q**(1/(2a)) and
  q**(1/(2b)) are integer powers of u and stay rational.
* approx -- resummed quantities use mpmath floats at a fixed binary
  precision with a fixed summation order, so identical inputs produce
  bit-identical values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import mpmath


def as_fraction(x) -> Fraction:
    """Coerce ints, strings like "2/3", and Fractions to Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as an exact rational")


@dataclass(frozen=True)
class Context:
    """One session's worth of model parameters and truncation knobs.

    q is derived as u**(2ab) and is never set directly.  p and r are the
    two parameter lists (lengths a and b); by convention p[-1] = r[-1] = 1
    unless the caller says otherwise.  q0 is the frozen rational value of
    the box-counting parameter used on the matrix side.
    """

    a: int
    b: int
    u: Fraction
    p: tuple = ()
    r: tuple = ()
    q_degree: int = 6
    fock_cutoff: int = 16
    jet_order: int = 1
    jet_symbols: int = 3
    precision_bits: int = 256
    tail_cutoff: int = 60
    q0: Fraction = Fraction(1, 2)
    _memo: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not (isinstance(self.a, int) and self.a >= 1):
            raise ValueError("a must be a positive integer")
        if not (isinstance(self.b, int) and self.b >= 1):
            raise ValueError("b must be a positive integer")
        u = as_fraction(self.u)
        if u == 0 or u == 1 or u == -1:
            raise ValueError("uniformizer u must differ from 0 and +-1 "
                             "(q may not be a root of unity)")
        object.__setattr__(self, "u", u)
        p = tuple(as_fraction(x) for x in (self.p or (Fraction(1),) * self.a))
        r = tuple(as_fraction(x) for x in (self.r or (Fraction(1),) * self.b))
        if len(p) != self.a:
            raise ValueError(f"p must have length a = {self.a}, got {len(p)}")
        if len(r) != self.b:
            raise ValueError(f"r must have length b = {self.b}, got {len(r)}")
        if any(x == 0 for x in p) or any(x == 0 for x in r):
            raise ValueError("all p_i and r_j must be nonzero")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        q0 = as_fraction(self.q0)
        if q0 == 0:
            raise ValueError("q0 must be nonzero")
        object.__setattr__(self, "q0", q0)
        for name in ("q_degree", "fock_cutoff", "jet_order"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.precision_bits <= 0 or self.tail_cutoff <= 0:
            raise ValueError("precision_bits and tail_cutoff must be positive")

    @property
    def q(self) -> Fraction:
        return self.u ** (2 * self.a * self.b)

    @property
    def big_p(self) -> tuple:
        """Consecutive ratios P_i = p_i / p_{i+1}, i = 1..a-1."""
        return tuple(self.p[i] / self.p[i + 1] for i in range(self.a - 1))

    @property
    def big_r(self) -> tuple:
        """Consecutive ratios R_j = r_j / r_{j+1}, j = 1..b-1."""
        return tuple(self.r[j] / self.r[j + 1] for j in range(self.b - 1))

    def q_constants(self) -> tuple:
        """The a+b nonzero constants feeding the initial dressing factors.

        Entry 1 is 1; entries 2..a are the partial products of the P_i;
        entry a+1 multiplies in q0; entries a+2..a+b multiply in the
        R_j from the top down.
        """
        P, R = self.big_p, self.big_r
        out = [Fraction(1)]
        for i in range(2, self.a + 1):
            out.append(out[-1] * P[i - 2])
        acc = Fraction(1)
        for x in P:
            acc *= x
        acc *= self.q0
        out.append(acc)
        for j in range(2, self.b + 1):
            acc *= R[self.b - j]
            out.append(acc)
        return tuple(out)

    def monomial_v(self) -> Fraction:
        """The diagonal monomial base P_1 ... P_{a-1} * q0 * R_{b-1} ... R_1."""
        acc = self.q0
        for x in self.big_p:
            acc *= x
        for x in self.big_r:
            acc *= x
        return acc

    def require_approx_regime(self):
        if not abs(self.u) < 1:
            raise ValueError("approximate regime needs |u| < 1 "
                             f"(got u = {self.u})")

    def normalized(self) -> bool:
        return self.p[-1] == 1 and self.r[-1] == 1


def qpow(ctx: Context, num: int, den: int = 1) -> Fraction:
    """q**(num/den) as an exact rational.  den must divide 2ab."""
    if den < 0:
        num, den = -num, -den
    two_ab = 2 * ctx.a * ctx.b
    if den == 0 or two_ab % den != 0:
        raise ValueError(f"exponent denominator {den} does not divide 2ab = {two_ab}")
    return ctx.u ** ((two_ab // den) * num)


# ---------------------------------------------------------------------------
# truncated power series in Q
# ---------------------------------------------------------------------------

def _zero_like(c):
    return c * 0


def _one_like(c):
    return c * 0 + 1


class QSeries:
    """Truncated series  sum_m coeffs[m] * Q**(offset+m).

    Exponents below `offset` are exactly zero; exponents above
    offset + len(coeffs) - 1 are unknown (truncated away).  Operations
    propagate the known range conservatively, so a coefficient you can
    read out is always the true one.
    """

    __slots__ = ("offset", "coeffs")

    def __init__(self, coeffs, offset: int = 0):
        coeffs = list(coeffs)
        if not coeffs:
            raise ValueError("a QSeries needs at least one known coefficient")
        self.coeffs = coeffs
        self.offset = offset

    @property
    def top(self) -> int:
        """Largest absolute Q-exponent with a known coefficient."""
        return self.offset + len(self.coeffs) - 1

    def coeff(self, e: int):
        """Coefficient of Q**e (absolute exponent)."""
        if e > self.top:
            raise ValueError(f"coefficient of Q^{e} was truncated away (top = {self.top})")
        if e < self.offset:
            return _zero_like(self.coeffs[0])
        return self.coeffs[e - self.offset]

    def map(self, f) -> "QSeries":
        return QSeries([f(c) for c in self.coeffs], self.offset)

    def rebase(self, offset: int) -> "QSeries":
        """Re-express with a lower offset, padding explicit zeros."""
        if offset > self.offset:
            raise ValueError("rebase can only lower the offset")
        pad = [_zero_like(self.coeffs[0])] * (self.offset - offset)
        return QSeries(pad + self.coeffs, offset)

    def __eq__(self, other):
        if not isinstance(other, QSeries):
            return NotImplemented
        top = min(self.top, other.top)
        lo = min(self.offset, other.offset)
        return all(self.coeff(e) == other.coeff(e) for e in range(lo, top + 1))

    def __hash__(self):
        raise TypeError("QSeries is unhashable")

    def __repr__(self):
        return f"QSeries(offset={self.offset}, coeffs={self.coeffs!r})"

    def __add__(self, other):
        return series_add(self, other)

    def __sub__(self, other):
        return series_add(self, series_neg(other))

    def __mul__(self, other):
        if isinstance(other, QSeries):
            return series_mul(self, other)
        return self.map(lambda c: c * other)

    __rmul__ = __mul__


def series_add(x: QSeries, y: QSeries) -> QSeries:
    top = min(x.top, y.top)
    lo = min(x.offset, y.offset)
    if top < lo:
        raise ValueError("series_add: no common known range")
    return QSeries([x.coeff(e) + y.coeff(e) for e in range(lo, top + 1)], lo)


def series_neg(x: QSeries) -> QSeries:
    return x.map(lambda c: -c)


def series_mul(x: QSeries, y: QSeries) -> QSeries:
    offset = x.offset + y.offset
    top = min(x.top + y.offset, y.top + x.offset)
    n = top - offset + 1
    zero = _zero_like(x.coeffs[0]) * _zero_like(y.coeffs[0])
    out = [zero] * n
    for i, ci in enumerate(x.coeffs):
        if not ci:
            continue
        jmax = min(len(y.coeffs), n - i)
        for j in range(jmax):
            cj = y.coeffs[j]
            if cj:
                out[i + j] = out[i + j] + ci * cj
    return QSeries(out, offset)


def series_inv(x: QSeries) -> QSeries:
    """Inverse of a series whose lowest known coefficient is invertible."""
    c0 = x.coeffs[0]
    if not c0:
        raise ValueError(f"series_inv: lowest coefficient {c0!r} at Q^{x.offset} "
                         "is not invertible")
    inv0 = _inv_scalar(c0)
    n = len(x.coeffs)
    out = [inv0] + [_zero_like(c0)] * (n - 1)
    for m in range(1, n):
        s = _zero_like(c0)
        for i in range(1, m + 1):
            if x.coeffs[i]:
                s = s + x.coeffs[i] * out[m - i]
        out[m] = -(inv0 * s)
    return QSeries(out, -x.offset)


def series_div(x: QSeries, y: QSeries) -> QSeries:
    return series_mul(x, series_inv(y))


def series_exp(x: QSeries) -> QSeries:
    """exp of a series with zero constant term."""
    if x.offset < 0:
        raise ValueError("series_exp: argument has negative-exponent terms")
    if x.offset == 0 and x.coeffs[0]:
        raise ValueError(f"series_exp: nonzero constant term {x.coeffs[0]!r}")
    top = x.top
    one = _one_like(x.coeffs[0])
    zero = _zero_like(x.coeffs[0])
    acc = [one] + [zero] * top
    term = QSeries(list(acc), 0)
    for n in range(1, top + 1):
        term = series_mul(term, x).map(lambda c, n=n: c / n)
        if term.offset > top:
            break
        term = QSeries(term.coeffs[: top + 1 - term.offset], term.offset)
        for e in range(term.offset, min(term.top, top) + 1):
            acc[e] = acc[e] + term.coeff(e)
    return QSeries(acc, 0)


def series_log(x: QSeries) -> QSeries:
    """log of a series with constant term 1."""
    if x.offset != 0 or x.coeffs[0] != 1:
        raise ValueError("series_log: constant term must be 1, got "
                         f"offset {x.offset}, lowest {x.coeffs[0]!r}")
    top = x.top
    zero = _zero_like(x.coeffs[0])
    y = QSeries([x.coeffs[0] - 1] + list(x.coeffs[1:]), 0)
    acc = [zero] * (top + 1)
    term = QSeries([_one_like(x.coeffs[0])] + [zero] * top, 0)
    for n in range(1, top + 1):
        term = series_mul(term, y)
        term = QSeries(term.coeffs[: top + 1 - term.offset], term.offset)
        sign = 1 if n % 2 == 1 else -1
        for e in range(term.offset, min(term.top, top) + 1):
            acc[e] = acc[e] + (term.coeff(e) / n if sign > 0 else -(term.coeff(e) / n))
    return QSeries(acc, 0)


def _inv_scalar(c):
    if isinstance(c, Jet):
        return c.inverse()
    return 1 / c


# ---------------------------------------------------------------------------
# jets in the coupling constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JetSpec:
    """Names and truncation order of the active coupling symbols."""

    symbols: tuple
    order: int

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("jet order must be nonnegative")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate jet symbols")

    def index(self, name: str) -> int:
        return self.symbols.index(name)

    @property
    def zero_expt(self) -> tuple:
        return (0,) * len(self.symbols)


def coupling_symbols(n_t: int, n_tbar: int = 0) -> tuple:
    """Symbol names t1..tn, tb1..tbn in canonical order."""
    return tuple(f"t{k}" for k in range(1, n_t + 1)) + \
        tuple(f"tb{k}" for k in range(1, n_tbar + 1))


class Jet:
    """Element of the polynomial ring in the coupling symbols, truncated
    above total degree `spec.order`.  Coefficients may be Fractions or
    mpmath floats; plain ints/Fractions coerce to constant jets."""

    __slots__ = ("spec", "terms")

    def __init__(self, spec: JetSpec, terms=None):
        self.spec = spec
        self.terms = {}
        if terms:
            for expt, c in terms.items():
                if c and sum(expt) <= spec.order:
                    self.terms[expt] = c

    @classmethod
    def const(cls, spec: JetSpec, c) -> "Jet":
        return cls(spec, {spec.zero_expt: c})

    @classmethod
    def variable(cls, spec: JetSpec, name, coeff=Fraction(1)) -> "Jet":
        i = spec.index(name)
        expt = tuple(1 if j == i else 0 for j in range(len(spec.symbols)))
        if spec.order < 1:
            return cls(spec, {})
        return cls(spec, {expt: coeff})

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.spec != self.spec:
                raise ValueError("jet spec mismatch")
            return other
        return Jet.const(self.spec, other)

    def coeff(self, expt):
        if isinstance(expt, str):
            expt = _parse_mono(self.spec, expt)
        zero = Fraction(0)
        for c in self.terms.values():
            zero = c * 0
            break
        return self.terms.get(tuple(expt), zero)

    @property
    def const_term(self):
        return self.coeff(self.spec.zero_expt)

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if isinstance(other, Jet):
            if other.spec != self.spec:
                return False
            return self.terms == other.terms
        return self == Jet.const(self.spec, other)

    def __hash__(self):
        raise TypeError("Jet is unhashable")

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            s = terms.get(e, 0) + c
            if s:
                terms[e] = s
            elif e in terms:
                del terms[e]
        return Jet(self.spec, terms)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.spec, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.spec, {e: c * other for e, c in self.terms.items()})
        if other.spec != self.spec:
            raise ValueError("jet spec mismatch")
        order = self.spec.order
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(x + y for x, y in zip(e1, e2))
                if sum(e) > order:
                    continue
                s = out.get(e, 0) + c1 * c2
                if s:
                    out[e] = s
                elif e in out:
                    del out[e]
        return Jet(self.spec, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Jet(self.spec, {e: c / other for e, c in self.terms.items()})

    def inverse(self) -> "Jet":
        c0 = self.const_term
        if not c0:
            raise ValueError("jet inverse needs an invertible constant term")
        inv0 = 1 / c0
        nil = Jet(self.spec, {e: -(c * inv0) for e, c in self.terms.items()
                              if sum(e) > 0})
        acc = Jet.const(self.spec, _one_like(c0))
        pw = Jet.const(self.spec, _one_like(c0))
        for _ in range(self.spec.order):
            pw = pw * nil
            if not pw:
                break
            acc = acc + pw
        return acc * inv0

    def map(self, f) -> "Jet":
        return Jet(self.spec, {e: f(c) for e, c in self.terms.items()})

    def monomials(self):
        return sorted(self.terms)

    def __repr__(self):
        body = " + ".join(f"{c}*{mono_str(self.spec, e)}" for e, c in sorted(self.terms.items()))
        return f"Jet({body or '0'})"


def jet_exp(x: Jet) -> Jet:
    """Truncated exponential of a jet with zero constant term."""
    if x.const_term:
        raise ValueError(f"jet_exp: nonzero constant term {x.const_term!r}")
    acc = Jet.const(x.spec, Fraction(1))
    term = Jet.const(x.spec, Fraction(1))
    for n in range(1, x.spec.order + 1):
        term = (term * x) / n
        if not term:
            break
        acc = acc + term
    return acc


def mono_str(spec: JetSpec, expt) -> str:
    parts = []
    for name, e in zip(spec.symbols, expt):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts) if parts else "1"


def _parse_mono(spec: JetSpec, text: str) -> tuple:
    expt = [0] * len(spec.symbols)
    if text.strip() != "1":
        for piece in text.split("*"):
            name, _, pw = piece.partition("^")
            expt[spec.index(name.strip())] += int(pw) if pw else 1
    return tuple(expt)


# ---------------------------------------------------------------------------
# approximate scalars
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApproxScalar:
    """An mpmath float tagged with the precision it was computed at.

    Arithmetic requires matching precision and is evaluated at that
    precision, so a value never silently gains digits it does not have.
    """

    value: object
    precision_bits: int

    def _check(self, other):
        if not isinstance(other, ApproxScalar):
            raise TypeError("ApproxScalar mixes only with ApproxScalar")
        if other.precision_bits != self.precision_bits:
            raise ValueError("precision mismatch")
        return other

    def _binop(self, other, op):
        other = self._check(other)
        with mpmath.workprec(self.precision_bits):
            return ApproxScalar(op(self.value, other.value), self.precision_bits)

    def __add__(self, other):
        return self._binop(other, lambda x, y: x + y)

    def __sub__(self, other):
        return self._binop(other, lambda x, y: x - y)

    def __mul__(self, other):
        return self._binop(other, lambda x, y: x * y)

    def __truediv__(self, other):
        return self._binop(other, lambda x, y: x / y)

    def to_str(self) -> str:
        digits = max(1, int(self.precision_bits * 0.30103))
        with mpmath.workprec(self.precision_bits):
            return mpmath.nstr(self.value, digits)


def frac_to_mpf(x: Fraction, bits: int):
    with mpmath.workprec(bits):
        return mpmath.mpf(x.numerator) / x.denominator


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def frac_str(x: Fraction) -> str:
    return str(Fraction(x))


def parse_frac(s: str) -> Fraction:
    return Fraction(s)


def series_to_obj(s: QSeries, codec=frac_str) -> dict:
    return {"offset": s.offset, "coeffs": [codec(c) for c in s.coeffs]}


def series_from_obj(obj: dict, codec=parse_frac) -> QSeries:
    return QSeries([codec(c) for c in obj["coeffs"]], obj["offset"])
