"""Band-matrix calculus on a window of the bi-infinite lattice.

Matrices are stored by diagonals: offset d holds the entries at
(n, n+d), indexed by the row site n, so the shift matrix with ones at
(n, n+1) is offset +1 and lower-triangular operators live on offsets
<= 0.  Products shrink the trusted region: every matrix carries a
margin, and checks only ever assert inside it.

Entry-exactness discipline: products of same-sign triangular factors,
unitriangular inverses, and diagonal conjugations are finite sums and
stay exact; products mixing raising and lowering bands (the generating
matrix) are honest resummations, carry the approx ring flag, and are
certified by residual decay when the inner truncation doubles.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import mpmath

from .crystal import ModelKind
from .report import CheckReport, exact_report
from .scalars import Context, frac_to_mpf, qpow


class BandMatrix:
    __slots__ = ("lo", "hi", "diags", "ring", "margin")

    def __init__(self, window, diags=None, ring="exact", margin=0):
        self.lo, self.hi = window
        if self.lo > self.hi:
            raise ValueError("empty window")
        self.diags = diags if diags is not None else {}
        self.ring = ring
        self.margin = margin

    # -- construction -------------------------------------------------
    @classmethod
    def identity(cls, window):
        lo, hi = window
        return cls(window, {0: {n: Fraction(1) for n in range(lo, hi + 1)}})

    @classmethod
    def shift(cls, window, k: int):
        """Lambda^k: ones at (n, n+k)."""
        lo, hi = window
        return cls(window, {k: {n: Fraction(1) for n in range(lo, hi + 1)
                                if lo <= n + k <= hi}})

    @classmethod
    def diagonal(cls, window, fn, ring="exact"):
        lo, hi = window
        return cls(window, {0: {n: fn(n) for n in range(lo, hi + 1)}}, ring)

    @classmethod
    def toeplitz(cls, window, coeffs: dict, ring="exact"):
        lo, hi = window
        diags = {}
        for d, c in coeffs.items():
            if not c:
                continue
            row = {n: c for n in range(lo, hi + 1) if lo <= n + d <= hi}
            if row:
                diags[d] = row
        return cls(window, diags, ring)

    # -- bookkeeping ---------------------------------------------------
    @property
    def window(self):
        return (self.lo, self.hi)

    def offsets(self):
        return sorted(self.diags)

    def entry(self, n: int, d: int):
        """Entry at (n, n+d); zero by definition when absent."""
        return self.diags.get(d, {}).get(n, Fraction(0))

    def trusted_sites(self):
        return range(self.lo + self.margin, self.hi - self.margin + 1)

    def is_trusted(self, n: int, d: int) -> bool:
        return (self.lo + self.margin <= n <= self.hi - self.margin and
                self.lo + self.margin <= n + d <= self.hi - self.margin)

    def copy(self):
        return BandMatrix(self.window, {d: dict(r) for d, r in self.diags.items()},
                          self.ring, self.margin)

    def map_entries(self, fn, ring=None):
        return BandMatrix(self.window,
                          {d: {n: fn(v) for n, v in row.items()}
                           for d, row in self.diags.items()},
                          ring or self.ring, self.margin)

    def to_obj(self, codec=str) -> dict:
        return {"window": [self.lo, self.hi], "ring": self.ring,
                "margin": self.margin,
                "diagonals": [{"offset": d,
                               "entries": [codec(self.diags[d].get(n, 0))
                                           for n in range(self.lo, self.hi + 1)]}
                              for d in self.offsets()]}

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return _band_add(self, other, 1)

    def __sub__(self, other):
        return _band_add(self, other, -1)

    def __mul__(self, other):
        if isinstance(other, BandMatrix):
            return band_mul(self, other)
        return self.map_entries(lambda v: v * other)

    def __rmul__(self, other):
        return self.map_entries(lambda v: other * v)


def _weaker(r1: str, r2: str) -> str:
    return "approx" if "approx" in (r1, r2) else "exact"


def _band_add(x: BandMatrix, y: BandMatrix, sign: int) -> BandMatrix:
    if x.window != y.window:
        raise ValueError("window mismatch")
    diags = {d: dict(r) for d, r in x.diags.items()}
    for d, row in y.diags.items():
        tgt = diags.setdefault(d, {})
        for n, v in row.items():
            w = tgt.get(n, Fraction(0)) + (v if sign > 0 else -v)
            if w:
                tgt[n] = w
            elif n in tgt:
                del tgt[n]
    return BandMatrix(x.window, {d: r for d, r in diags.items() if r},
                      _weaker(x.ring, y.ring), max(x.margin, y.margin))


def band_mul(x: BandMatrix, y: BandMatrix) -> BandMatrix:
    """Product with conservative margin growth.

    Intermediate sites wander outside [row, col] only when an ascending
    offset of x meets a descending offset of y (or vice versa), so the
    margin grows by that excursion; same-sign triangular products keep
    their margins.
    """
    if x.window != y.window:
        raise ValueError("window mismatch")
    xo = x.offsets()
    yo = y.offsets()
    if not xo or not yo:
        return BandMatrix(x.window, {}, _weaker(x.ring, y.ring),
                          max(x.margin, y.margin))
    up = max(0, min(max(xo), -min(yo)))
    down = max(0, min(-min(xo), max(yo)))
    margin = max(x.margin, y.margin) + max(up, down)
    lo, hi = x.window
    diags = {}
    for d1, row1 in x.diags.items():
        for d2, row2 in y.diags.items():
            d = d1 + d2
            tgt = diags.setdefault(d, {})
            for n, v1 in row1.items():
                v2 = row2.get(n + d1)
                if v2 is None:
                    continue
                w = tgt.get(n, Fraction(0)) + v1 * v2
                if w:
                    tgt[n] = w
                elif n in tgt:
                    del tgt[n]
    return BandMatrix(x.window, {d: r for d, r in diags.items() if r},
                      _weaker(x.ring, y.ring), margin)


def band_conj_qdelta2(ctx: Context, x: BandMatrix, den: int, sign: int) -> BandMatrix:
    """Entrywise-exact conjugation q^{sign Delta^2/den} X q^{-sign Delta^2/den}.

    Entry (n, n+d) picks up q^{sign (n^2 - (n+d)^2)/den}; den must divide
    2ab so the power is an integer power of the uniformizer.
    """
    diags = {}
    for d, row in x.diags.items():
        diags[d] = {n: v * qpow(ctx, sign * (n * n - (n + d) * (n + d)), den)
                    for n, v in row.items()}
    return BandMatrix(x.window, diags, x.ring, x.margin)


def band_conj_udelta(base: Fraction, x: BandMatrix) -> BandMatrix:
    """u^Delta X u^{-Delta}: entry (n, n+d) times base^{-d}."""
    diags = {}
    for d, row in x.diags.items():
        scale = Fraction(base) ** (-d)
        diags[d] = {n: v * scale for n, v in row.items()}
    return BandMatrix(x.window, diags, x.ring, x.margin)


def triangular_inverse(x: BandMatrix, depth=None) -> BandMatrix:
    """Inverse of a triangular band matrix with invertible diagonal.

    Solved diagonal by diagonal through the entrywise-finite recursion
    sum_{j} X[n, n+j] Y[n+j, n+d] = delta_{d,0}; exact, margin grows by
    the computed depth.
    """
    offs = x.offsets()
    if 0 not in x.diags:
        raise ValueError("triangular inverse needs an explicit diagonal")
    lower = all(d <= 0 for d in offs)
    upper = all(d >= 0 for d in offs)
    if not (lower or upper):
        raise ValueError("matrix is not triangular")
    lo, hi = x.window
    if depth is None:
        depth = hi - lo
    diag = x.diags[0]
    if any(not diag.get(n) for n in range(lo, hi + 1)):
        raise ValueError("diagonal must be invertible on the whole window")
    inv0 = {n: 1 / diag[n] for n in diag}
    out = {0: inv0}
    sgn = -1 if lower else 1
    for step in range(1, depth + 1):
        d = sgn * step
        row = {}
        for n in range(lo, hi + 1):
            if not (lo <= n + d <= hi):
                continue
            total = Fraction(0)
            for j, xrow in x.diags.items():
                if j == 0:
                    continue
                v1 = xrow.get(n)
                if v1 is None:
                    continue
                v2 = out.get(d - j, {}).get(n + j)
                if v2 is not None:
                    total += v1 * v2
            if total:
                row[n] = -inv0[n] * total
        if row:
            out[d] = row
    return BandMatrix(x.window, out, x.ring, x.margin + depth)


def interior_equal(x: BandMatrix, y: BandMatrix, limit=3, offset_cap=None) -> list:
    """First disagreements on the common trusted region (exact equality).

    offset_cap bounds |offset|: diagonals beyond the Toeplitz truncation
    depth of the ingredients are incomplete rather than zero, so callers
    with truncated-infinite factors must cap the comparison.
    """
    failures = []
    margin = max(x.margin, y.margin)
    lo, hi = x.lo + margin, x.hi - margin
    for d in sorted(set(x.diags) | set(y.diags)):
        if offset_cap is not None and abs(d) > offset_cap:
            continue
        for n in range(lo, hi + 1):
            if not (lo <= n + d <= hi):
                continue
            a, b = x.entry(n, d), y.entry(n, d)
            if a != b:
                failures.append({"site": n, "offset": d,
                                 "lhs": str(a), "rhs": str(b)})
                if len(failures) >= limit:
                    return failures
    return failures


# ---------------------------------------------------------------------------
# Toeplitz coefficient sequences of the vertex-operator matrices
# ---------------------------------------------------------------------------

def gamma_toeplitz(ctx: Context, sign: int, primed: bool, scale,
                   n_terms: int, inverse: bool = False) -> dict:
    """Diagonal coefficients of the matrix vertex operators.

    The plain operator at argument scale*(q^{1/2}, q^{3/2}, ...) is the
    inverse product prod_i (1 - scale q^{i-1/2} L)^{-1} with L the shift
    in the `sign` direction; coefficient j is then h_j of the scaled
    sequence.  The primed family is the plain product with +, giving
    e_j = scale^j q^{j^2/2} / prod(1-q^m); inverses swap the two shapes
    with alternating signs.
    """
    scale = Fraction(scale)
    q = ctx.q
    if inverse:
        scale, primed = -scale, not primed
    out = {0: Fraction(1)}
    num = Fraction(1)
    den = Fraction(1)
    for j in range(1, n_terms + 1):
        num *= scale * (qpow(ctx, 2 * j - 1, 2) if primed else qpow(ctx, 1, 2))
        den *= 1 - q ** j
        out[sign * j] = num / den
    return out


def _toeplitz_product(ctx: Context, sign: int, factors, n_terms: int) -> dict:
    """Convolution of gamma_toeplitz coefficient sequences."""
    acc = {0: Fraction(1)}
    for primed, scale, inverse in factors:
        coeffs = gamma_toeplitz(ctx, sign, primed, scale, n_terms, inverse)
        new = {}
        for d1, c1 in acc.items():
            for d2, c2 in coeffs.items():
                if abs(d1 + d2) > n_terms:
                    continue
                new[d1 + d2] = new.get(d1 + d2, Fraction(0)) + c1 * c2
        acc = {d: c for d, c in new.items() if c}
    return acc


def framing_conjugate(ctx: Context, x: BandMatrix, den: int, sign: int) -> BandMatrix:
    """Public name of the q^{+-Delta^2/den} conjugation."""
    return band_conj_qdelta2(ctx, x, den, sign)


# ---------------------------------------------------------------------------
# technical lemma verification
# ---------------------------------------------------------------------------

def _qdelta_diag(ctx: Context, window, power_sign=1) -> BandMatrix:
    return BandMatrix.diagonal(window, lambda n: ctx.q ** (power_sign * n))


def gamma_conjugation_lemmas(ctx: Context, u_scale, window=(-8, 8)) -> CheckReport:
    """Entrywise-exact verification of the framing and dilogarithm moves.

    Checked identities (L is the ascending shift, Linv descending):
      k1a: q^{-D^2/2a} L^a q^{D^2/2a} = q^{a/2} q^D L^a
      k1b: u^D q^{D^2/2b} L^{-b} q^{-D^2/2b} u^{-D} = u^b q^{-b/2} q^D L^{-b}
      k2a: G_-(u)^{-1} q^D G_-(u) = q^D (1 - u q^{-1/2} Linv)
      k2b: G_+(1/u) q^D G_+(1/u)^{-1} = q^D (1 - (1/u) q^{1/2} L)
      k3 : u^D q^{-D^2/2b} L^{-b} q^{D^2/2b} u^{-D} = u^b q^{b/2} q^{-D} L^{-b}
      k4 : G'_-(u)^{-1} q^D G'_-(u) = q^D (1 + u q^{-1/2} Linv)^{-1}
      k5a: G_+(1/u) q^{-D} G_+(1/u)^{-1} = q^{-D} (1 - (1/u) q^{-1/2} L)^{-1}
      k5b: G'_+(1/u) q^{-D} G'_+(1/u)^{-1} = q^{-D} (1 + (1/u) q^{-1/2} L)
    """
    u_scale = Fraction(u_scale)
    if u_scale == 0:
        raise ValueError("u must be nonzero")
    lo, hi = window
    width = hi - lo
    q = ctx.q
    failures = []

    def check(name, lhs, rhs):
        for f in interior_equal(lhs, rhs, limit=1):
            f["lemma"] = name
            failures.append(f)

    qd = _qdelta_diag(ctx, window)
    qd_inv = _qdelta_diag(ctx, window, -1)

    # k1a
    La = BandMatrix.shift(window, ctx.a)
    lhs = band_conj_qdelta2(ctx, La, 2 * ctx.a, -1)
    rhs = qpow(ctx, ctx.a, 2) * band_mul(qd, La)
    check("k1a", lhs, rhs)
    # k1b
    Lmb = BandMatrix.shift(window, -ctx.b)
    lhs = band_conj_udelta(u_scale, band_conj_qdelta2(ctx, Lmb, 2 * ctx.b, +1))
    rhs = (u_scale ** ctx.b * qpow(ctx, -ctx.b, 2)) * band_mul(qd, Lmb)
    check("k1b", lhs, rhs)
    # k3
    lhs = band_conj_udelta(u_scale, band_conj_qdelta2(ctx, Lmb, 2 * ctx.b, -1))
    rhs = (u_scale ** ctx.b * qpow(ctx, ctx.b, 2)) * band_mul(qd_inv, Lmb)
    check("k3", lhs, rhs)

    def toep(primed, scale, inverse, sign):
        return BandMatrix.toeplitz(window,
                                   gamma_toeplitz(ctx, sign, primed, scale,
                                                  width, inverse))

    half = qpow(ctx, 1, 2)
    # k2a
    lhs = band_mul(band_mul(toep(False, u_scale, True, -1), qd),
                   toep(False, u_scale, False, -1))
    rhs = band_mul(qd, BandMatrix.toeplitz(
        window, {0: Fraction(1), -1: -u_scale / half}))
    check("k2a", lhs, rhs)
    # k2b
    vinv = 1 / u_scale
    lhs = band_mul(band_mul(toep(False, vinv, False, +1), qd),
                   toep(False, vinv, True, +1))
    rhs = band_mul(qd, BandMatrix.toeplitz(
        window, {0: Fraction(1), +1: -vinv * half}))
    check("k2b", lhs, rhs)
    # k4
    lhs = band_mul(band_mul(toep(True, u_scale, True, -1), qd),
                   toep(True, u_scale, False, -1))
    inv_factor = BandMatrix.toeplitz(
        window, {-j: (-u_scale / half) ** j for j in range(width + 1)})
    rhs = band_mul(qd, inv_factor)
    check("k4", lhs, rhs)
    # k5a
    lhs = band_mul(band_mul(toep(False, vinv, False, +1), qd_inv),
                   toep(False, vinv, True, +1))
    inv_factor = BandMatrix.toeplitz(
        window, {j: (vinv / half) ** j for j in range(width + 1)})
    rhs = band_mul(qd_inv, inv_factor)
    check("k5a", lhs, rhs)
    # k5b
    lhs = band_mul(band_mul(toep(True, vinv, False, +1), qd_inv),
                   toep(True, vinv, True, +1))
    rhs = band_mul(qd_inv, BandMatrix.toeplitz(
        window, {0: Fraction(1), +1: vinv / half}))
    check("k5b", lhs, rhs)

    return exact_report("framing_lemmas",
                        {"a": ctx.a, "b": ctx.b, "u_scale": str(u_scale),
                         "window": list(window)}, failures)


# ---------------------------------------------------------------------------
# initial dressing, Lax powers, reduced factors
# ---------------------------------------------------------------------------

@dataclass
class DressingPair:
    W: BandMatrix
    Wbar: BandMatrix
    W_inv: BandMatrix
    Wbar_inv: BandMatrix


@dataclass
class LaxPowers:
    La: BandMatrix       # L^a
    Lbar_mb: BandMatrix  # Lbar^{-b}


@dataclass
class ReducedFactors:
    B: BandMatrix
    C: BandMatrix
    D: Fraction


def _gamma_factor_lists(ctx: Context, model: ModelKind):
    """(primed?, scale) pairs for the a+b dressing constituents."""
    model = ModelKind(model)
    consts = ctx.q_constants()
    out = []
    for i, c in enumerate(consts):
        primed = model is ModelKind.SECOND and i >= ctx.a
        out.append((primed, c))
    return out


def initial_dressing(ctx: Context, model: ModelKind, window=(-12, 12)) -> DressingPair:
    """Closed-form dressing pair at the initial time.

    W is the framing-conjugated product of inverse raising factors at the
    a+b constants; Wbar is the product of lowering factors at their
    reciprocals times the diagonal monomial and the second framing
    factor.  The closed-form inverses come from the same products with
    `inverse` toggled.
    """
    model = ModelKind(model)
    lo, hi = window
    width = hi - lo
    facs = _gamma_factor_lists(ctx, model)
    sigma = 1 if model is ModelKind.FIRST else -1
    v = ctx.monomial_v()

    low = _toeplitz_product(ctx, -1, [(p, c, True) for p, c in facs], width)
    low_inv = _toeplitz_product(ctx, -1, [(p, c, False) for p, c in facs], width)
    up = _toeplitz_product(ctx, +1, [(p, 1 / c, False) for p, c in facs], width)
    up_inv = _toeplitz_product(ctx, +1, [(p, 1 / c, True) for p, c in facs], width)

    W = band_conj_qdelta2(ctx, BandMatrix.toeplitz(window, low), 2 * ctx.a, +1)
    W_inv = band_conj_qdelta2(ctx, BandMatrix.toeplitz(window, low_inv), 2 * ctx.a, +1)

    left = BandMatrix.diagonal(window, lambda n: qpow(ctx, n * n, 2 * ctx.a))
    right = BandMatrix.diagonal(
        window, lambda n: Fraction(v) ** n * qpow(ctx, sigma * n * n, 2 * ctx.b))
    Wbar = band_mul(band_mul(left, BandMatrix.toeplitz(window, up)), right)
    left_inv = BandMatrix.diagonal(window, lambda n: qpow(ctx, -n * n, 2 * ctx.a))
    right_inv = BandMatrix.diagonal(
        window, lambda n: Fraction(v) ** (-n) * qpow(ctx, -sigma * n * n, 2 * ctx.b))
    Wbar_inv = band_mul(band_mul(right_inv, BandMatrix.toeplitz(window, up_inv)),
                        left_inv)
    return DressingPair(W, Wbar, W_inv, Wbar_inv)


def lax_init(ctx: Context, model: ModelKind, window=(-12, 12)) -> LaxPowers:
    """Initial L^a and Lbar^{-b} by dressing the shift powers (exact)."""
    pair = initial_dressing(ctx, model, window)
    La = band_mul(band_mul(pair.W, BandMatrix.shift(window, ctx.a)), pair.W_inv)
    Lbar = band_mul(band_mul(pair.Wbar, BandMatrix.shift(window, -ctx.b)),
                    pair.Wbar_inv)
    return LaxPowers(La, Lbar)


def _shift_poly(factors_consts, half_inv, ascending: bool):
    """Coefficients of prod (Lambda - c/half) (ascending) or
    prod (1 + c*half_inv*Lambda^{-1}) style factors; both as offset dicts."""
    poly = {0: Fraction(1)}
    for c in factors_consts:
        new = {}
        for d, v in poly.items():
            if ascending:
                new[d + 1] = new.get(d + 1, Fraction(0)) + v
                new[d] = new.get(d, Fraction(0)) - v * c * half_inv
            else:
                new[d] = new.get(d, Fraction(0)) + v
                new[d - 1] = new.get(d - 1, Fraction(0)) + v * c * half_inv
        poly = {d: v for d, v in new.items() if v}
    return poly


def reduced_factors(ctx: Context, model: ModelKind, window=(-12, 12)) -> ReducedFactors:
    """Closed-form factors: B monic ascending of degree a, C descending of
    depth b with unit constant term, and the proportionality constant D.

    B = q^{a/2} q^{D^2/2a} q^D prod_{i<=a} (Lambda - Q^{(i)} q^{-1/2}) q^{-D^2/2a}
    C = q^{D^2/2a} prod_{j<=b} (1 -+ Q^{(a+j)} q^{-1/2} Lambda^{-1}) q^{-D^2/2a}
    with - for the first model and + for the second;
    D = V^b prod_k (-Q^{(k)-1})            (first model)
    D' = V^b prod_i (-Q^{(i)}) prod_j Q^{(a+j)-1}   (second model).
    """
    model = ModelKind(model)
    consts = ctx.q_constants()
    half_inv = qpow(ctx, -1, 2)
    v = ctx.monomial_v()

    poly_b = _shift_poly(consts[:ctx.a], half_inv, ascending=True)
    T = BandMatrix.toeplitz(window, poly_b)
    qd = _qdelta_diag(ctx, window)
    B = qpow(ctx, ctx.a, 2) * band_conj_qdelta2(ctx, band_mul(qd, T), 2 * ctx.a, +1)

    sign = Fraction(-1) if model is ModelKind.FIRST else Fraction(1)
    poly_c = _shift_poly([sign * c for c in consts[ctx.a:]], half_inv,
                         ascending=False)
    C = band_conj_qdelta2(ctx, BandMatrix.toeplitz(window, poly_c), 2 * ctx.a, +1)

    if model is ModelKind.FIRST:
        d_const = v ** ctx.b
        for c in consts:
            d_const *= -1 / c
    else:
        d_const = v ** ctx.b
        for c in consts[:ctx.a]:
            d_const *= -c
        for c in consts[ctx.a:]:
            d_const *= 1 / c
    return ReducedFactors(B, C, d_const)


def _structural_failures(x: BandMatrix, off_min: int, off_max: int,
                         monic_offset=None, unit_offset=None, limit=3,
                         offset_cap=None) -> list:
    """Assert the band lives exactly on [off_min, off_max] on the trusted
    region, with all-ones diagonal where requested."""
    failures = []
    lo = x.lo + x.margin
    hi = x.hi - x.margin
    for d in x.offsets():
        if offset_cap is not None and abs(d) > offset_cap:
            continue
        for n, val in x.diags[d].items():
            if not (lo <= n <= hi and lo <= n + d <= hi):
                continue
            if (d < off_min or d > off_max) and val:
                failures.append({"site": n, "offset": d, "value": str(val),
                                 "problem": "outside band"})
                if len(failures) >= limit:
                    return failures
    for d, label in ((monic_offset, "monic"), (unit_offset, "unit")):
        if d is None:
            continue
        for n in range(lo, hi + 1):
            if not (lo <= n + d <= hi):
                continue
            if x.entry(n, d) != 1:
                failures.append({"site": n, "offset": d,
                                 "value": str(x.entry(n, d)),
                                 "problem": f"{label} diagonal is not 1"})
                if len(failures) >= limit:
                    return failures
    return failures


def factorization_check(ctx: Context, model: ModelKind, window=(-12, 12)) -> CheckReport:
    """Exact factorized form of the initial Lax powers.

    First model:  L^a = D^{-1} Lbar^{-b} = B C, and the product has
    exactly the a+b+1 diagonals of a Laurent band of bi-degree (a, b).
    Second model: L^a C = B and Lbar^{-b} B = D C, both inverse-free.
    """
    model = ModelKind(model)
    lax = lax_init(ctx, model, window)
    rf = reduced_factors(ctx, model, window)
    lo, hi = window
    # diagonals deeper than the Toeplitz truncation of the dressing
    # factors are incomplete, not zero; stay above them
    cap = (hi - lo) - max(ctx.a, ctx.b) - 2
    failures = []
    if model is ModelKind.FIRST:
        BC = band_mul(rf.B, rf.C)
        for f in interior_equal(lax.La, BC, offset_cap=cap):
            f["identity"] = "La = BC"
            failures.append(f)
        scaled = lax.La.map_entries(lambda x: x * rf.D)
        for f in interior_equal(scaled, lax.Lbar_mb, offset_cap=cap):
            f["identity"] = "D*La = Lbar^{-b}"
            failures.append(f)
        for f in _structural_failures(lax.La, -ctx.b, ctx.a,
                                      monic_offset=ctx.a, offset_cap=cap):
            f["identity"] = "Laurent band shape"
            failures.append(f)
        for f in _structural_failures(rf.B, 0, ctx.a, monic_offset=ctx.a):
            f["identity"] = "B shape"
            failures.append(f)
        for f in _structural_failures(rf.C, -ctx.b, 0, unit_offset=0):
            f["identity"] = "C shape"
            failures.append(f)
    else:
        lhs = band_mul(lax.La, rf.C)
        for f in interior_equal(lhs, rf.B, offset_cap=cap):
            f["identity"] = "L'a C' = B'"
            failures.append(f)
        lhs2 = band_mul(lax.Lbar_mb, rf.B)
        rhs2 = rf.C.map_entries(lambda x: x * rf.D)
        for f in interior_equal(lhs2, rhs2, offset_cap=cap):
            f["identity"] = "Lbar'^{-b} B' = D' C'"
            failures.append(f)
        for f in _structural_failures(rf.B, 0, ctx.a, monic_offset=ctx.a):
            f["identity"] = "B' shape"
            failures.append(f)
        for f in _structural_failures(rf.C, -ctx.b, 0, unit_offset=0):
            f["identity"] = "C' shape"
            failures.append(f)
    return exact_report("initial_factorization",
                        {"model": model.value, "a": ctx.a, "b": ctx.b,
                         "window": list(window), "q0": str(ctx.q0)}, failures)


def _band_power(x: BandMatrix, n: int) -> BandMatrix:
    out = None
    for _ in range(n):
        out = x if out is None else band_mul(out, x)
    return out if out is not None else BandMatrix.identity(x.window)


def _nonneg_part(x: BandMatrix) -> BandMatrix:
    return BandMatrix(x.window, {d: dict(r) for d, r in x.diags.items() if d >= 0},
                      x.ring, x.margin)


def _solve_exact(rows, n_unknowns):
    """Gaussian elimination over Fractions; returns a solution or None."""
    m = [list(r) for r in rows]
    pivots = []
    col = 0
    row = 0
    while row < len(m) and col < n_unknowns:
        piv = None
        for i in range(row, len(m)):
            if m[i][col]:
                piv = i
                break
        if piv is None:
            col += 1
            continue
        m[row], m[piv] = m[piv], m[row]
        pv = m[row][col]
        m[row] = [x / pv for x in m[row]]
        for i in range(len(m)):
            if i != row and m[i][col]:
                f = m[i][col]
                m[i] = [x - f * y for x, y in zip(m[i], m[row])]
        pivots.append(col)
        row += 1
        col += 1
    # inconsistency: a fully reduced zero row with nonzero right side
    for r in m[row:]:
        if not any(r[:-1]) and r[-1]:
            return None
    sol = [Fraction(0)] * n_unknowns
    for i, c in enumerate(pivots):
        sol[c] = m[i][-1]
    return sol


def tangency_check(ctx: Context, model: ModelKind, k=None,
                   window=(-12, 12)) -> CheckReport:
    """First-order preservation of the factorized form by the k-th flow.

    With Bk the nonnegative part of L^k (k a multiple of a, so the power
    is exact) and M = [Bk, L^a], solves the window-interior linear system
      first model:  M = Bdot C + B Cdot
      second model: Bdot - L^a Cdot = M C     (inverse-free)
    for the diagonal coefficients of Bdot (offsets a-1..0) and Cdot
    (offsets -1..-b), and asserts exact zero residual.
    """
    model = ModelKind(model)
    if k is None:
        k = ctx.a
    if k % ctx.a != 0:
        raise ValueError("tangency_check needs k to be a multiple of a "
                         "(fractional Lax powers are out of scope)")
    lax = lax_init(ctx, model, window)
    rf = reduced_factors(ctx, model, window)
    La = lax.La
    Bk = _nonneg_part(_band_power(La, k // ctx.a))
    M = band_mul(Bk, La) - band_mul(La, Bk)

    lo, hi = window
    MC = band_mul(M, rf.C) if model is ModelKind.SECOND else None

    margin = max([rf.B.margin, rf.C.margin, M.margin] +
                 ([MC.margin, La.margin] if model is ModelKind.SECOND else []))
    site_lo, site_hi = lo + margin, hi - margin
    if site_lo > site_hi:
        raise ValueError("window too small for the requested interior")

    sites = list(range(site_lo, site_hi + 1))
    site_index = {n: i for i, n in enumerate(sites)}
    nb = ctx.a          # Bdot offsets 0..a-1
    nc = ctx.b          # Cdot offsets -1..-b
    n_unknowns = (nb + nc) * len(sites)

    def b_dot_index(i_off, n):
        return i_off * len(sites) + site_index[n]

    def c_dot_index(j_off, n):
        return (nb + (-j_off) - 1) * len(sites) + site_index[n]

    if model is ModelKind.FIRST:
        d_range = range(ctx.a - 1, -ctx.b - 1, -1)
    else:
        depth = min(ctx.b + ctx.a + 2, (hi - lo) // 2)
        d_range = range(ctx.a - 1, -depth - 1, -1)

    rows = []
    checked = []
    for d in d_range:
        for n in sites:
            row = [Fraction(0)] * (n_unknowns + 1)
            ok = True
            if model is ModelKind.FIRST:
                if not M.is_trusted(n, d):
                    continue
                # Bdot C: the unknown Bdot[i] sits at site n, its C
                # coefficient at site n + i
                for i_off in range(0, ctx.a):
                    e = d - i_off
                    if -ctx.b <= e <= 0:
                        if not rf.C.is_trusted(n + i_off, e):
                            ok = False
                            break
                        row[b_dot_index(i_off, n)] += rf.C.entry(n + i_off, e)
                if ok:
                    # B Cdot: the unknown Cdot[e] sits at site n + i'
                    for i_off in range(0, ctx.a + 1):
                        e = d - i_off
                        if -ctx.b <= e <= -1:
                            if n + i_off not in site_index or \
                                    not rf.B.is_trusted(n, i_off):
                                ok = False
                                break
                            row[c_dot_index(e, n + i_off)] += rf.B.entry(n, i_off)
                if not ok:
                    continue
                row[-1] = M.entry(n, d)
            else:
                if not MC.is_trusted(n, d):
                    continue
                if 0 <= d <= ctx.a - 1:
                    row[b_dot_index(d, n)] += Fraction(1)
                # - L^a Cdot
                for j_off in range(-ctx.b, 0):
                    e = d - j_off
                    if n + e not in site_index or not La.is_trusted(n, e):
                        ok = False
                        break
                    row[c_dot_index(j_off, n + e)] -= La.entry(n, e)
                if not ok:
                    continue
                row[-1] = MC.entry(n, d)
            rows.append(row)
            checked.append((d, n))

    sol = _solve_exact(rows, n_unknowns)
    failures = []
    if sol is None:
        failures.append({"problem": "linear system inconsistent"})
    else:
        for row, (d, n) in zip(rows, checked):
            resid = sum((c * s for c, s in zip(row[:-1], sol)), Fraction(0)) - row[-1]
            if resid:
                failures.append({"offset": d, "site": n, "residual": str(resid)})
                if len(failures) >= 3:
                    break
    return exact_report("tangency",
                        {"model": model.value, "k": k, "a": ctx.a, "b": ctx.b,
                         "equations": len(rows), "window": list(window)},
                        failures)


# ---------------------------------------------------------------------------
# generating matrix and its numerical factorization
# ---------------------------------------------------------------------------

def _mpf_toeplitz(ctx: Context, window, sign: int, primed: bool, scale,
                  bandwidth: int, bits: int) -> BandMatrix:
    coeffs = gamma_toeplitz(ctx, sign, primed, scale, bandwidth)
    mp_coeffs = {d: frac_to_mpf(c, bits) for d, c in coeffs.items()}
    return BandMatrix.toeplitz(window, mp_coeffs, ring="approx")


def build_u(ctx: Context, model: ModelKind, tail_cutoff=None,
            window=(-12, 12), gammas_off: bool = False) -> BandMatrix:
    """Numerical generating matrix: the literal alternating factor product.

    Every vertex factor is truncated at bandwidth tail_cutoff and the
    lattice window is padded by the same amount, so all inner sums are
    finite truncations of the true resummation.  Entries are mpmath
    floats; the trusted region is the unpadded window.  gammas_off drops
    the vertex factors (the product is then diagonal).
    """
    ctx.require_approx_regime()
    model = ModelKind(model)
    tail = tail_cutoff if tail_cutoff is not None else ctx.tail_cutoff
    bits = ctx.precision_bits
    lo, hi = window
    ext = (lo - tail, hi + tail)
    primed = model is ModelKind.SECOND
    P, R = ctx.big_p, ctx.big_r
    sigma = 1 if model is ModelKind.FIRST else -1

    with mpmath.workprec(bits):
        uf = frac_to_mpf(ctx.u, bits)

        def wdiag(den_mult, sgn):
            mult = 2 * ctx.a * ctx.b // den_mult
            return BandMatrix.diagonal(ext, lambda n: uf ** (sgn * mult * n * n),
                                       ring="approx")

        def ddiag(base):
            bf = frac_to_mpf(Fraction(base), bits)
            return BandMatrix.diagonal(ext, lambda n: bf ** n, ring="approx")

        def pair(pr):
            if gammas_off:
                return []
            return [_mpf_toeplitz(ctx, ext, -1, pr, 1, tail, bits),
                    _mpf_toeplitz(ctx, ext, +1, pr, 1, tail, bits)]

        factors = [wdiag(2 * ctx.a, +1)]
        for i in range(ctx.a - 1):
            factors += pair(False) + [ddiag(P[i])]
        factors += pair(False) + [ddiag(ctx.q0)]
        for j in range(ctx.b - 2, -1, -1):
            factors += pair(primed) + [ddiag(R[j])]
        factors += pair(primed)
        factors += [wdiag(2 * ctx.b, sigma)]

        acc = factors[0]
        for fac in factors[1:]:
            acc = band_mul(acc, fac)
    return BandMatrix(ext, acc.diags, "approx", tail)


def _dressing_mpf(ctx: Context, model: ModelKind, ext, tail: int, bits: int):
    """W^{-1} and Wbar on the padded window, as mpf band matrices."""
    model = ModelKind(model)
    facs = _gamma_factor_lists(ctx, model)
    sigma = 1 if model is ModelKind.FIRST else -1
    v = ctx.monomial_v()
    low_inv = _toeplitz_product(ctx, -1, [(p, c, False) for p, c in facs], tail)
    up = _toeplitz_product(ctx, +1, [(p, 1 / c, False) for p, c in facs], tail)
    W_inv = band_conj_qdelta2(
        ctx, BandMatrix.toeplitz(ext, {d: frac_to_mpf(c, bits)
                                       for d, c in low_inv.items()},
                                 ring="approx"), 2 * ctx.a, +1)
    uf = frac_to_mpf(ctx.u, bits)
    vf = frac_to_mpf(v, bits)
    left = BandMatrix.diagonal(ext, lambda n: uf ** (ctx.b * n * n), ring="approx")
    right = BandMatrix.diagonal(
        ext, lambda n: vf ** n * uf ** (sigma * ctx.a * n * n), ring="approx")
    Wbar = band_mul(band_mul(left, BandMatrix.toeplitz(
        ext, {d: frac_to_mpf(c, bits) for d, c in up.items()}, ring="approx")),
        right)
    return W_inv, Wbar


def u_factorization_check(ctx: Context, model: ModelKind, tails=(40, 80),
                          window=(-12, 12), margin: int = 4,
                          decay: int = 10) -> CheckReport:
    """Residual decay of U - W^{-1} Wbar under tail doubling.

    Entries vary over many orders of magnitude (diagonal monomials and
    framing gaussians), so the residual is per-entry relative.
    """
    ctx.require_approx_regime()
    model = ModelKind(model)
    bits = ctx.precision_bits
    lo, hi = window
    residuals = {}
    with mpmath.workprec(bits):
        for tail in tails:
            U = build_u(ctx, model, tail, window)
            W_inv, Wbar = _dressing_mpf(ctx, model, U.window, tail, bits)
            WW = band_mul(W_inv, Wbar)
            worst = mpmath.mpf(0)
            for d in range(-(hi - lo), hi - lo + 1):
                for n in range(lo + margin, hi - margin + 1):
                    if not (lo + margin <= n + d <= hi - margin):
                        continue
                    a_ = U.entry(n, d)
                    b_ = WW.entry(n, d)
                    if isinstance(a_, Fraction):
                        a_ = mpmath.mpf(0)
                    if isinstance(b_, Fraction):
                        b_ = mpmath.mpf(0)
                    scale = max(mpmath.mpf(1), abs(a_), abs(b_))
                    worst = max(worst, abs(a_ - b_) / scale)
            residuals[str(tail)] = mpmath.nstr(worst, 8)
        vals = [mpmath.mpf(residuals[str(t)]) for t in tails]
        floor = mpmath.mpf(10) ** (-(bits * 3) // 4)
        ok = all(vals[i + 1] <= vals[i] / decay or vals[i + 1] < floor
                 for i in range(len(vals) - 1))
    return CheckReport("u_factorization",
                       {"model": model.value, "tails": list(tails),
                        "window": list(window), "a": ctx.a, "b": ctx.b},
                       "pass" if ok else "fail",
                       residuals[str(tails[-1])], residuals, [])
