"""Truncated charged free-fermion Fock space.

Conventions, fixed once and used by everything below:

* The charge-s sector is spanned by partitions of weight <= cutoff, in
  the same graded-lex order as `partitions.enumerate_partitions`.
* A state (lam, s) is encoded by its strictly decreasing beta sequence
  b_i = lam_i + s - i + 1 (the occupied fermion modes are -b_i, so the
  mode set is bounded below and eventually solid upward).  Every
  operator is built from single-bead moves b -> b - step of this
  sequence; the reordering sign (-1)^{#beads strictly between the old
  and new value} is computed in exactly one place, `_moves`, which is
  the single source of truth for fermionic signs.
* Weight-raising exponentials (products of lowering currents J_{-k})
  truncate exactly at the cutoff; raising-after-lowering pipelines are
  honest resummations and carry cutoff-dependent error, which checks
  must certify by residual decay under cutoff growth.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath

from . import partitions, schur
from .crystal import ModelKind, jet_spec_for, macmahon, prefactor_ratio, z_series
from .report import CheckReport, exact_report
from .scalars import (Context, Jet, JetSpec, QSeries, coupling_symbols,
                      frac_to_mpf, jet_exp, qpow, series_div)


# ---------------------------------------------------------------------------
# single-bead moves
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _moves(lam: tuple, step: int):
    """All single-bead moves b -> b - step of the charge-0 beta sequence.

    Returns tuples (target, sign, removed_beta).  step > 0 lowers the
    weight by step, step < 0 raises it.  Results are charge independent:
    shifting every beta by s changes neither validity nor sign.
    """
    if step == 0:
        raise ValueError("zero move is not a bead move")
    ell = len(lam)
    n = ell + abs(step) + 1
    beta = [(lam[i] - i) if i < ell else -i for i in range(n)]
    bset = set(beta)
    out = []
    for j in range(n):
        c = beta[j] - step
        if c in bset or c <= -n:
            continue
        lo, hi = (c, beta[j]) if c < beta[j] else (beta[j], c)
        crossings = sum(1 for x in beta if lo < x < hi)
        newbeta = sorted((bset - {beta[j]}) | {c}, reverse=True)
        parts = []
        for i, bb in enumerate(newbeta):
            v = bb + i
            if v <= 0:
                break
            parts.append(v)
        out.append((tuple(parts), -1 if crossings % 2 else 1, beta[j]))
    return tuple(out)


def psi_apply(lam: tuple, s: int, mode: int):
    """Creation of one fermion mode on (lam, s), landing in charge s + 1.

    Returns (partition, sign) or None when the mode is already occupied
    (applying the same creation twice therefore yields 0).  The sign is
    one transposition per occupied mode below the new one.
    """
    ell = len(lam)
    n = ell + abs(mode) + abs(s) + 3
    beta = [(lam[j] + s - j) if j < ell else s - j for j in range(n)]
    b_new = -mode
    if b_new in set(beta) or b_new <= s - n:
        return None
    sign = -1 if sum(1 for x in beta if x > b_new) % 2 else 1
    newbeta = sorted(beta + [b_new], reverse=True)
    parts = []
    for j, bb in enumerate(newbeta):
        v = bb - (s + 1) + j
        if v <= 0:
            break
        parts.append(v)
    return tuple(parts), sign


def psi_star_apply(lam: tuple, s: int, mode_index: int):
    """Annihilation psi*: removes mode -mode_index, landing in charge s - 1.

    Returns (partition, sign) or None when the mode is empty.
    """
    ell = len(lam)
    n = ell + abs(mode_index) + abs(s) + 3
    beta = [(lam[j] + s - j) if j < ell else s - j for j in range(n)]
    b_rm = mode_index
    # the window always reaches past b_rm, so membership is decidable here
    if b_rm not in set(beta):
        return None
    sign = -1 if sum(1 for x in beta if x > b_rm) % 2 else 1
    newbeta = sorted(set(beta) - {b_rm}, reverse=True)
    parts = []
    for j, bb in enumerate(newbeta):
        v = bb - (s - 1) + j
        if v <= 0:
            break
        parts.append(v)
    return tuple(parts), sign


# ---------------------------------------------------------------------------
# diagonal eigenvalues (independent finite-difference route)
# ---------------------------------------------------------------------------

def _charge_tail(g, s: int):
    if s >= 0:
        return sum((g(j) for j in range(1, s + 1)), Fraction(0))
    return -sum((g(j) for j in range(s + 1, 1)), Fraction(0))


def diag_maya(lam: tuple, s: int, g):
    """sum_{occupied beta} g(beta) minus its vacuum value, telescoped.

    The row sum runs over the explicit parts; the solid tail contributes
    the explicit charge sum, evaluated term by term (no closed form).
    """
    total = _charge_tail(g, s)
    for i, part in enumerate(lam):
        total += g(part + s - i) - g(s - i)
    return total


def charge_eig(lam, s):
    return s


def l0_eig(lam, s):
    return partitions.weight(lam) + s * (s + 1) // 2


def w0_eig(lam, s):
    return partitions.kappa(lam) + (2 * s + 1) * partitions.weight(lam) \
        + s * (s + 1) * (2 * s + 1) // 6


def hk_eig_maya(ctx: Context, k: int, lam, s: int) -> Fraction:
    q = ctx.q
    return diag_maya(lam, s, lambda beta: q ** (k * beta))


# ---------------------------------------------------------------------------
# vector-level operator application
# ---------------------------------------------------------------------------

def unit_vector(lam=(), one=Fraction(1)) -> dict:
    return {tuple(lam): one}


def apply_diag(vec: dict, eig) -> dict:
    return {lam: eig(lam) * v for lam, v in vec.items()}


def apply_current(vec: dict, k: int, D: int) -> dict:
    """J_k: moves one bead by k (k > 0 lowers the weight)."""
    out = {}
    for lam, val in vec.items():
        if k < 0 and partitions.weight(lam) - k > D:
            continue
        for lam2, sgn, _ in _moves(lam, k):
            if k < 0 and partitions.weight(lam2) > D:
                continue
            add = val if sgn > 0 else -val
            acc = out.get(lam2)
            out[lam2] = add if acc is None else acc + add
    return {lam: v for lam, v in out.items() if v}


def apply_bilinear(ctx: Context, vec: dict, k: int, m: int, s: int, D: int) -> dict:
    """V^{(k)}_m, exact: amplitude q^{-km/2} q^{k(beta+s)} per bead move."""
    if m == 0:
        if k == 0:
            return apply_diag(vec, lambda lam: Fraction(s))
        return apply_diag(vec, lambda lam: hk_eig_maya(ctx, k, lam, s))
    q = ctx.q
    pref = qpow(ctx, -k * m, 2)
    qs = q ** (k * s)
    out = {}
    for lam, val in vec.items():
        if m < 0 and partitions.weight(lam) - m > D:
            continue
        for lam2, sgn, beta in _moves(lam, m):
            if partitions.weight(lam2) > D:
                continue
            amp = pref * qs * q ** (k * beta) * val
            if sgn < 0:
                amp = -amp
            acc = out.get(lam2)
            out[lam2] = amp if acc is None else acc + amp
    return {lam: v for lam, v in out.items() if v}


def vertex_coefficients(ctx: Context, x, kmax: int, primed=False,
                        inverse=False) -> dict:
    """Current coefficients of a vertex operator: exp(sum_k c_k J_{+-k}).

    c_k = p_k(x)/k, with the alternating sign for the primed family and a
    global negation for inverses.
    """
    out = {}
    for k in range(1, kmax + 1):
        if isinstance(x, schur.Specialization):
            pk = schur.powersum(ctx, k, x)
        else:
            pk = sum((Fraction(xi) ** k for xi in x), Fraction(0))
        c = pk / k
        if primed and k % 2 == 0:
            c = -c
        if inverse:
            c = -c
        if c:
            out[k] = c
    return out


def apply_vertex_exp(vec: dict, coeffs: dict, sign: int, D: int) -> dict:
    """exp(sum_k coeffs[k] J_{sign*k}) applied to vec.

    sign = -1 raises (vertex operators of lowering-current type Gamma_-),
    sign = +1 lowers (Gamma_+ type).  Raising truncates at weight D; the
    series itself always terminates because each application moves the
    weight monotonically.
    """
    out = dict(vec)
    cur = vec
    n = 1
    while cur:
        nxt = {}
        for lam, val in cur.items():
            w = partitions.weight(lam)
            for k, c in coeffs.items():
                if sign < 0 and w + k > D:
                    continue
                for lam2, sgn, _ in _moves(lam, sign * k):
                    if sign < 0 and partitions.weight(lam2) > D:
                        continue
                    amp = c * val
                    if sgn < 0:
                        amp = -amp
                    acc = nxt.get(lam2)
                    nxt[lam2] = amp if acc is None else acc + amp
        nxt = {lam: v / n for lam, v in nxt.items() if v}
        for lam, v in nxt.items():
            acc = out.get(lam)
            out[lam] = v if acc is None else acc + v
        cur = nxt
        n += 1
    return {lam: v for lam, v in out.items() if v}


# ---------------------------------------------------------------------------
# materialized sparse operators (exact regime)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FockBasis:
    charge: int
    cutoff: int

    @property
    def states(self):
        return partitions.enumerate_partitions(self.cutoff)

    @property
    def dimension(self) -> int:
        return len(self.states)


class FockOp:
    """Column-sparse exact operator on a truncated charge sector."""

    __slots__ = ("basis", "cols", "degree_shift")

    def __init__(self, basis: FockBasis, cols: dict, degree_shift=None):
        self.basis = basis
        self.cols = cols
        self.degree_shift = degree_shift

    @classmethod
    def from_apply(cls, basis: FockBasis, fn, degree_shift=None) -> "FockOp":
        cols = {}
        for lam in basis.states:
            col = fn(unit_vector(lam))
            if col:
                cols[lam] = col
        return cls(basis, cols, degree_shift)

    def apply(self, vec: dict) -> dict:
        out = {}
        for mu, val in vec.items():
            col = self.cols.get(mu)
            if not col or not val:
                continue
            for lam, c in col.items():
                acc = out.get(lam)
                prod = c * val
                out[lam] = prod if acc is None else acc + prod
        return {lam: v for lam, v in out.items() if v}

    def compose(self, other: "FockOp") -> "FockOp":
        shift = None
        if self.degree_shift is not None and other.degree_shift is not None:
            shift = self.degree_shift + other.degree_shift
        cols = {}
        for mu, col in other.cols.items():
            new = self.apply(col)
            if new:
                cols[mu] = new
        return FockOp(self.basis, cols, shift)

    def entry(self, row, col):
        return self.cols.get(tuple(col), {}).get(tuple(row), Fraction(0))

    def scaled(self, c) -> "FockOp":
        return FockOp(self.basis,
                      {mu: {lam: c * v for lam, v in col.items()}
                       for mu, col in self.cols.items()},
                      self.degree_shift)

    def add(self, other: "FockOp") -> "FockOp":
        cols = {}
        for mu in set(self.cols) | set(other.cols):
            col = dict(self.cols.get(mu, {}))
            for lam, v in other.cols.get(mu, {}).items():
                col[lam] = col.get(lam, Fraction(0)) + v
            col = {lam: v for lam, v in col.items() if v}
            if col:
                cols[mu] = col
        return FockOp(self.basis, cols, None)

    def sub(self, other: "FockOp") -> "FockOp":
        return self.add(other.scaled(Fraction(-1)))

    def add_scalar(self, c) -> "FockOp":
        cols = {mu: dict(col) for mu, col in self.cols.items()}
        if c:
            for mu in self.basis.states:
                col = cols.setdefault(mu, {})
                col[mu] = col.get(mu, Fraction(0)) + c
        return FockOp(self.basis, cols, self.degree_shift)


def bilinear(ctx: Context, basis: FockBasis, k: int, m: int) -> FockOp:
    """Matrix of V^{(k)}_m on the truncated charge sector (exact)."""
    key = ("V", basis.charge, basis.cutoff, k, m)
    op = ctx._memo.get(key)
    if op is None:
        op = FockOp.from_apply(
            basis, lambda v: apply_bilinear(ctx, v, k, m, basis.charge, basis.cutoff),
            degree_shift=m)
        ctx._memo[key] = op
    return op


def diagonal_op(basis: FockBasis, eig) -> FockOp:
    return FockOp.from_apply(basis, lambda v: apply_diag(v, lambda lam: eig(lam, basis.charge)),
                             degree_shift=0)


def gamma(ctx: Context, basis: FockBasis, sign: str, primed: bool, x,
          inverse: bool = False) -> FockOp:
    """Vertex operator as an exact matrix; sign '-' raises, '+' lowers.

    Matrix elements of the '-' operators against the basis are skew Schur
    values (transposed shapes for the primed family); that identity is
    covered by the test suite rather than assumed here.
    """
    if sign not in "+-":
        raise ValueError("sign must be '+' or '-'")
    key = ("G", basis.charge, basis.cutoff, sign, primed,
           x.scales if isinstance(x, schur.Specialization) else tuple(x), inverse)
    op = ctx._memo.get(key)
    if op is None:
        coeffs = vertex_coefficients(ctx, x, basis.cutoff, primed=primed, inverse=inverse)
        sgn = -1 if sign == "-" else 1
        op = FockOp.from_apply(
            basis, lambda v: apply_vertex_exp(v, coeffs, sgn, basis.cutoff))
        ctx._memo[key] = op
    return op


def principal_spec() -> schur.Specialization:
    return schur.Specialization((Fraction(1),))


# ---------------------------------------------------------------------------
# exact identity checks
# ---------------------------------------------------------------------------

def _interior(basis: FockBasis, margin: int):
    return [lam for lam in basis.states
            if partitions.weight(lam) <= basis.cutoff - margin]


def _first_failures(lhs: FockOp, rhs: FockOp, interior, limit=3):
    out = []
    for mu in interior:
        for lam in interior:
            a = lhs.entry(lam, mu)
            b = rhs.entry(lam, mu)
            if a != b:
                out.append({"row": list(lam), "col": list(mu),
                            "lhs": str(a), "rhs": str(b)})
                if len(out) >= limit:
                    return out
    return out


def eigenvalue_check(ctx: Context, max_weight: int = 8, charges=(-2, -1, 0, 1, 2),
                     k_range=(1, 2, 3)) -> CheckReport:
    """Diagonal matrix elements of J_0, L_0, W_0, H_k against closed forms."""
    failures = []
    for s in charges:
        basis = FockBasis(s, max_weight)
        for lam in basis.states:
            trio = [
                ("J0", diag_maya(lam, s, lambda beta: Fraction(1)), Fraction(s)),
                ("L0", diag_maya(lam, s, lambda beta: Fraction(beta)),
                 Fraction(l0_eig(lam, s))),
                ("W0", diag_maya(lam, s, lambda beta: Fraction(beta * beta)),
                 Fraction(w0_eig(lam, s))),
            ]
            for k in k_range:
                for kk in (k, -k):
                    trio.append((f"H_{kk}", hk_eig_maya(ctx, kk, lam, s),
                                 partitions.phi(ctx, kk, lam, s)))
            for name, got, want in trio:
                if got != want:
                    failures.append({"op": name, "state": list(lam), "s": s,
                                     "got": str(got), "want": str(want)})
    return exact_report("eigenvalues", {"max_weight": max_weight}, failures)


def commutator_check(ctx: Context, k: int, m: int, l: int, n: int,
                     margin: int, s: int = 0, cutoff=None) -> CheckReport:
    """Quantum-torus commutation relation on interior matrix elements.

    [V^{(k)}_m, V^{(l)}_n] equals
      (q^{(lm-kn)/2} - q^{(kn-lm)/2}) (V^{(k+l)}_{m+n} - d_{m+n,0} q^{k+l}/(1-q^{k+l}))
    for k+l != 0, and
      (q^{-k(m+n)/2} - q^{k(m+n)/2}) V^{(0)}_{m+n} + m d_{m+n,0}
    for k+l = 0; exact equality, central terms included.
    """
    if margin < abs(m) + abs(n):
        raise ValueError("margin must be at least |m| + |n|")
    D = cutoff if cutoff is not None else ctx.fock_cutoff
    basis = FockBasis(s, D)
    A = bilinear(ctx, basis, k, m)
    B = bilinear(ctx, basis, l, n)
    lhs = A.compose(B).sub(B.compose(A))
    coeff = qpow(ctx, l * m - k * n, 2) - qpow(ctx, k * n - l * m, 2)
    if k + l != 0:
        rhs = bilinear(ctx, basis, k + l, m + n)
        if m + n == 0:
            q_kl = ctx.q ** (k + l)
            rhs = rhs.add_scalar(-q_kl / (1 - q_kl))
        rhs = rhs.scaled(coeff)
    else:
        rhs = bilinear(ctx, basis, 0, m + n).scaled(coeff)
        if m + n == 0:
            rhs = rhs.add_scalar(Fraction(m))
    interior = _interior(basis, margin)
    failures = _first_failures(lhs, rhs, interior)
    return exact_report("quantum_torus_commutator",
                        {"k": k, "m": m, "l": l, "n": n, "s": s,
                         "cutoff": D, "margin": margin}, failures)


def shift_symmetry_check(ctx: Context, kind: str, k: int, m: int = 0,
                         margin: int = 4, s: int = 0, cutoff=None) -> CheckReport:
    """The three shift symmetries plus their fractional-framing variants.

    kind 'i'   : Gamma_+ (V^{(k)}_m - c d_{m,0}) Gamma_+^{-1}
                 = (-1)^k Gamma_-^{-1} (V^{(k)}_{m+k} - c d_{m+k,0}) Gamma_-,
                 c = q^k/(1-q^k), k > 0
    kind 'ii'  : primed version with +1/(1-q^k) shifts and no sign
    kind 'iii' : q^{W_0/2} V^{(k)}_m q^{-W_0/2} = V^{(k-m)}_m
    kind 'frac_a': q^{W_0/2a} V^{(k)}_{ak} q^{-W_0/2a} = J_{ak}
    kind 'frac_b': q^{W_0/2b} V^{(-k)}_{-bk} q^{-W_0/2b} = J_{-bk}
    All equalities are exact on interior matrix elements.
    """
    D = cutoff if cutoff is not None else ctx.fock_cutoff
    basis = FockBasis(s, D)
    q = ctx.q
    params = {"kind": kind, "k": k, "m": m, "s": s, "cutoff": D, "margin": margin}

    if kind in ("i", "ii"):
        if k <= 0:
            raise ValueError("kinds i and ii need k > 0")
        need = max(0, -m, m + k)
        if margin < need:
            raise ValueError(f"margin {margin} too small; need >= {need}")
        primed = kind == "ii"
        spec = principal_spec()
        gp = gamma(ctx, basis, "+", primed, spec)
        gp_inv = gamma(ctx, basis, "+", primed, spec, inverse=True)
        gm = gamma(ctx, basis, "-", primed, spec)
        gm_inv = gamma(ctx, basis, "-", primed, spec, inverse=True)
        kk = k if kind == "i" else -k
        shift = q ** k / (1 - q ** k) if kind == "i" else -1 / (1 - q ** k)
        X = bilinear(ctx, basis, kk, m)
        if m == 0:
            X = X.add_scalar(-shift)
        lhs = gp.compose(X).compose(gp_inv)
        Y = bilinear(ctx, basis, kk, m + k)
        if m + k == 0:
            Y = Y.add_scalar(-shift)
        rhs = gm_inv.compose(Y).compose(gm)
        if kind == "i" and k % 2 == 1:
            rhs = rhs.scaled(Fraction(-1))
    elif kind in ("iii", "frac_a", "frac_b"):
        if kind == "iii":
            den, kk, mm, target = 2, k, m, bilinear(ctx, basis, k - m, m)
        elif kind == "frac_a":
            den, kk, mm = 2 * ctx.a, k, ctx.a * k
            target = bilinear(ctx, basis, 0, ctx.a * k)
        else:
            den, kk, mm = 2 * ctx.b, -k, -ctx.b * k
            target = bilinear(ctx, basis, 0, -ctx.b * k)
        X = bilinear(ctx, basis, kk, mm)
        cols = {}
        for mu, col in X.cols.items():
            wmu = w0_eig(mu, s)
            cols[mu] = {lam: v * qpow(ctx, w0_eig(lam, s) - wmu, den)
                        for lam, v in col.items()}
        lhs = FockOp(basis, cols, X.degree_shift)
        rhs = target
        params["shift_m"] = mm
    else:
        raise ValueError(f"unknown shift symmetry kind {kind!r}")

    interior = _interior(basis, margin)
    failures = _first_failures(lhs, rhs, interior)
    return exact_report("shift_symmetry", params, failures)


def gamma_commutation_check(ctx: Context, u_scale, v_scale, primed: bool = False,
                            cutoffs=(8, 12), margin: int = 4, s: int = 0,
                            tol=None, decay: int = 10) -> CheckReport:
    """Vertex-operator commutation against the resummed MacMahon constant.

    Unprimed: Gamma_+(u) Gamma_-(v) = M(uv, q) Gamma_-(v) Gamma_+(u).
    Primed, in the arrangement the overtaking moves actually use:
    Gamma'_+(u)^{-1} Gamma'_-(v) = M(uv, q)^{-1} Gamma'_-(v) Gamma'_+(u)^{-1}.
    The left sides need resummation above the cutoff, so the check
    certifies residual decay on a cutoff-independent set of entries.
    """
    ctx.require_approx_regime()
    u_scale, v_scale = Fraction(u_scale), Fraction(v_scale)
    mac = macmahon(ctx, u_scale * v_scale)
    bits = ctx.precision_bits
    # fixed comparison region: the same matrix elements at every cutoff,
    # so residual decay isolates the truncation error
    weight_cap = min(cutoffs) - margin
    residuals = {}
    with mpmath.workprec(bits):
        for D in cutoffs:
            cu = {k: frac_to_mpf(c, bits) for k, c in
                  vertex_coefficients(ctx, schur.Specialization((u_scale,)), D,
                                      primed=primed, inverse=primed).items()}
            cv = {k: frac_to_mpf(c, bits) for k, c in
                  vertex_coefficients(ctx, schur.Specialization((v_scale,)), D,
                                      primed=primed).items()}
            interior = partitions.enumerate_partitions(weight_cap)
            worst = mpmath.mpf(0)
            for mu in interior:
                start = unit_vector(mu, mpmath.mpf(1))
                plus_minus = apply_vertex_exp(
                    apply_vertex_exp(start, cv, -1, D), cu, +1, D)
                minus_plus = apply_vertex_exp(
                    apply_vertex_exp(start, cu, +1, D), cv, -1, D)
                for lam in interior:
                    lhs = plus_minus.get(lam, mpmath.mpf(0))
                    ref = minus_plus.get(lam, mpmath.mpf(0))
                    rhs = ref / mac.value if primed else ref * mac.value
                    worst = max(worst, abs(lhs - rhs))
            residuals[str(D)] = mpmath.nstr(worst, 8)
        tol = tol if tol is not None else mpmath.mpf(10) ** (-bits // 8)
        vals = [mpmath.mpf(residuals[str(D)]) for D in cutoffs]
        ok = vals[-1] < tol and all(vals[i + 1] <= vals[i] / decay or vals[i + 1] < tol / 100
                                    for i in range(len(vals) - 1))
    return CheckReport("gamma_commutation",
                       {"u": str(u_scale), "v": str(v_scale), "primed": primed,
                        "cutoffs": list(cutoffs), "s": s},
                       "pass" if ok else "fail",
                       residuals[str(cutoffs[-1])], residuals, [])


# ---------------------------------------------------------------------------
# generating-operator pipelines
# ---------------------------------------------------------------------------

@dataclass
class GPipeline:
    """Ordered factor list of a generating operator; the 'qgrade' slot is
    where the box-counting grading is read off."""

    model: ModelKind
    factors: tuple
    gammas_off: bool = False

    def halves(self):
        i = self.factors.index(("qgrade",))
        return self.factors[:i], self.factors[i + 1:]


def build_g(ctx: Context, model: ModelKind, gammas_off: bool = False) -> GPipeline:
    """Factor list of the generating operator.

    Left half: fractional framing q^{W_0/2a}, then a raising/lowering
    vertex pair around each diagonal P_i^{L_0}; right half mirrors with
    R_j^{L_0} (primed vertex pairs for the second model) and closes with
    q^{+W_0/2b} (first) or q^{-W_0/2b} (second).
    """
    model = ModelKind(model)
    primed = model is ModelKind.SECOND
    P, R = ctx.big_p, ctx.big_r
    facs = [("wpow", 1, 2 * ctx.a)]
    pair = [] if gammas_off else [("gamma", -1, False), ("gamma", +1, False)]
    pair_r = [] if gammas_off else [("gamma", -1, primed), ("gamma", +1, primed)]
    for i in range(ctx.a - 1):
        facs += pair + [("lpow", P[i])]
    facs += pair + [("qgrade",)]
    for j in range(ctx.b - 2, -1, -1):
        facs += pair_r + [("lpow", R[j])]
    facs += pair_r
    facs += [("wpow", 1 if model is ModelKind.FIRST else -1, 2 * ctx.b)]
    return GPipeline(model, tuple(facs), gammas_off)


def _gamma_mpf_coeffs(ctx: Context, primed: bool, D: int) -> dict:
    key = ("gcoef", primed, D, ctx.precision_bits)
    out = ctx._memo.get(key)
    if out is None:
        exact = vertex_coefficients(ctx, principal_spec(), D, primed=primed)
        out = {k: frac_to_mpf(c, ctx.precision_bits) for k, c in exact.items()}
        ctx._memo[key] = out
    return out


def _apply_factor(ctx: Context, fac, vec: dict, s: int, D: int, transposed: bool):
    kind = fac[0]
    if kind == "gamma":
        _, sgn, primed = fac
        if transposed:
            sgn = -sgn
        coeffs = _gamma_mpf_coeffs(ctx, primed, D)
        return apply_vertex_exp(vec, coeffs, sgn, D)
    if kind == "wpow":
        _, num, den = fac
        mult = (2 * ctx.a * ctx.b // den) * num
        uf = frac_to_mpf(ctx.u, ctx.precision_bits)
        return {lam: v * uf ** (mult * w0_eig(lam, s)) for lam, v in vec.items()}
    if kind == "lpow":
        base = frac_to_mpf(fac[1], ctx.precision_bits)
        return {lam: v * base ** l0_eig(lam, s) for lam, v in vec.items()}
    raise ValueError(f"unknown factor {fac!r}")


def _apply_chain(ctx: Context, factors, vec: dict, s: int, D: int,
                 transposed: bool = False) -> dict:
    """Apply a factor chain to a ket; `transposed` applies the transposed
    product instead (vertex raising and lowering swap roles)."""
    seq = factors if transposed else tuple(reversed(factors))
    for fac in seq:
        vec = _apply_factor(ctx, fac, vec, s, D, transposed)
        if not vec:
            break
    return vec


def _pairing_by_weight(left: dict, right: dict, q_degree: int):
    out = [mpmath.mpf(0)] * (q_degree + 1)
    for lam, v in right.items():
        w = partitions.weight(lam)
        if w <= q_degree and lam in left:
            out[w] += left[lam] * v
    return out


def _hook_vector(size: int, D: int):
    """J_{-size} applied to the sector vacuum (mpf amplitudes): signed hooks."""
    return apply_current(unit_vector((), mpmath.mpf(1)), -size, D)


def tau(ctx: Context, model: ModelKind, s: int = 0, cutoff=None) -> QSeries:
    """Tau function of the generating operator, as a Q-series of jets.

    <s| exp(sum t_k J_k) g exp(-sum tbar_k J_{-k}) |s> at the session's
    jet order (couplings enter linearly at order 1).
    """
    if ctx.jet_order != 1:
        raise ValueError("tau is implemented at jet order 1")
    ctx.require_approx_regime()
    model = ModelKind(model)
    D = cutoff if cutoff is not None else ctx.fock_cutoff
    K = ctx.jet_symbols
    jspec = JetSpec(coupling_symbols(K, K), 1)
    with mpmath.workprec(ctx.precision_bits):
        A, B = build_g(ctx, model).halves()
        one = mpmath.mpf(1)
        uT = _apply_chain(ctx, A, unit_vector((), one), s, D, transposed=True)
        wB = _apply_chain(ctx, B, unit_vector((), one), s, D)
        base = _pairing_by_weight(uT, wB, ctx.q_degree)
        coeffs = [Jet.const(jspec, base[m]) for m in range(ctx.q_degree + 1)]
        for k in range(1, K + 1):
            uTk = _apply_chain(ctx, A, _hook_vector(k, D), s, D, transposed=True)
            comp = _pairing_by_weight(uTk, wB, ctx.q_degree)
            for m in range(ctx.q_degree + 1):
                coeffs[m] = coeffs[m] + Jet.variable(jspec, f"t{k}", comp[m])
            wBk = _apply_chain(ctx, B, _hook_vector(k, D), s, D)
            comp = _pairing_by_weight(uT, wBk, ctx.q_degree)
            for m in range(ctx.q_degree + 1):
                coeffs[m] = coeffs[m] + Jet.variable(jspec, f"tb{k}", -comp[m])
    return QSeries(coeffs, s * (s + 1) // 2)


def _tau_parts(ctx: Context, model: ModelKind, s: int, D: int, K: int):
    """Weight-resolved pairings through the grading slot.

    Returns (base, left, right): base[m] = <s|A Pi_m B|s>, left[k][m] with
    J_{ak} inserted on the left, right[k][m] with J_{-bk} on the right.
    """
    A, B = build_g(ctx, model).halves()
    one = mpmath.mpf(1)
    uT = _apply_chain(ctx, A, unit_vector((), one), s, D, transposed=True)
    wB = _apply_chain(ctx, B, unit_vector((), one), s, D)
    base = _pairing_by_weight(uT, wB, ctx.q_degree)
    left, right = {}, {}
    for k in range(1, K + 1):
        uTk = _apply_chain(ctx, A, _hook_vector(ctx.a * k, D), s, D, transposed=True)
        left[k] = _pairing_by_weight(uTk, wB, ctx.q_degree)
        wBk = _apply_chain(ctx, B, _hook_vector(ctx.b * k, D), s, D)
        right[k] = _pairing_by_weight(uT, wBk, ctx.q_degree)
    return base, left, right


def _coupling_constants(ctx: Context, which: int):
    """Gap reparametrization constants for couplings entering at J_{ak}, J_{-bk}."""
    P, R = ctx.big_p, ctx.big_r
    t_const, tbar_const = {}, {}
    for k in range(1, ctx.jet_symbols + 1):
        c = Fraction(-1) ** (ctx.a * k)
        for i0, Pi in enumerate(P):
            c *= Pi ** (-(ctx.a - 1 - i0) * k)
        t_const[k] = c
        cb = Fraction(1)
        for j0, Rj in enumerate(R):
            cb *= Rj ** (-(ctx.b - 1 - j0) * k)
        if which == 1:
            cb *= Fraction(-1) ** (ctx.b * k)
        tbar_const[k] = cb
    return t_const, tbar_const


def _jet_series_mpf(series: QSeries, bits: int) -> QSeries:
    return series.map(lambda jet: jet.map(lambda c: frac_to_mpf(c, bits)))


def theorem_check(ctx: Context, which: int, s: int = 0, cutoffs=(16, 24),
                  tol=None, decay: int = 10) -> CheckReport:
    """Ratio-normalized tau correspondence for one model.

    Verifies coefficientwise in Q^m (m <= q_degree) and in each coupling
    monomial that  Z(s,t)/Z(s,0) = prefactor(t) * tau(T)/tau(0), where the
    couplings enter the tau function only at indices ak (left) and bk
    (right) with the gap reparametrization constants.  For the first model
    both reparametrized routes are checked; for the second model the
    tbar couplings ride along on the right.  Constant prefactors cancel
    in the ratio.  Passing requires the residual to decay by `decay`
    between consecutive cutoffs and to land below `tol`.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    if ctx.jet_order != 1:
        raise ValueError("theorem_check runs at jet order 1")
    if not ctx.normalized():
        raise ValueError("theorem_check needs normalized parameters p_a = r_b = 1")
    ctx.require_approx_regime()
    model = ModelKind.FIRST if which == 1 else ModelKind.SECOND
    bits = ctx.precision_bits
    K = ctx.jet_symbols
    jspec = jet_spec_for(ctx, model)

    zs = z_series(ctx, model, s)
    denom = zs.series.map(lambda jet: Jet.const(jspec, jet.const_term))
    ratio = _jet_series_mpf(series_div(zs.series, denom), bits)
    pre = prefactor_ratio(ctx, model).map(lambda c: frac_to_mpf(c, bits))
    t_const, tbar_const = _coupling_constants(ctx, which)

    residuals = {}
    with mpmath.workprec(bits):
        for D in cutoffs:
            base, left, right = _tau_parts(ctx, model, s, D, K)
            ways = []
            if which == 1:
                way1 = [Jet.const(jspec, base[m]) for m in range(ctx.q_degree + 1)]
                way2 = [Jet.const(jspec, base[m]) for m in range(ctx.q_degree + 1)]
                for k in range(1, K + 1):
                    ck = frac_to_mpf(t_const[k], bits)
                    cbk = frac_to_mpf(tbar_const[k], bits)
                    for m in range(ctx.q_degree + 1):
                        way1[m] = way1[m] + Jet.variable(jspec, f"t{k}", ck * left[k][m])
                        way2[m] = way2[m] + Jet.variable(jspec, f"t{k}", cbk * right[k][m])
                ways = [way1, way2]
            else:
                way = [Jet.const(jspec, base[m]) for m in range(ctx.q_degree + 1)]
                for k in range(1, K + 1):
                    ck = frac_to_mpf(t_const[k], bits)
                    cbk = frac_to_mpf(tbar_const[k], bits)
                    for m in range(ctx.q_degree + 1):
                        way[m] = way[m] + Jet.variable(jspec, f"t{k}", ck * left[k][m])
                        way[m] = way[m] + Jet.variable(jspec, f"tb{k}", cbk * right[k][m])
                ways = [way]
            worst = mpmath.mpf(0)
            base_series = QSeries([Jet.const(jspec, base[m])
                                   for m in range(ctx.q_degree + 1)], 0)
            for way in ways:
                tau_ratio = series_div(QSeries(way, 0), base_series)
                rhs = tau_ratio.map(lambda jet: jet * pre)
                zero = mpmath.mpf(0)
                for m in range(ctx.q_degree + 1):
                    want = ratio.coeffs[m]
                    got = rhs.coeff(m)
                    for expt in set(want.terms) | set(got.terms):
                        diff = abs(want.terms.get(expt, zero) - got.terms.get(expt, zero))
                        worst = max(worst, diff)
            residuals[str(D)] = mpmath.nstr(worst, 8)
        tol_v = tol if tol is not None else mpmath.mpf(10) ** (-bits // 8)
        vals = [mpmath.mpf(residuals[str(D)]) for D in cutoffs]
        ok = vals[-1] < tol_v and all(
            vals[i + 1] <= vals[i] / decay or vals[i + 1] < tol_v / 100
            for i in range(len(vals) - 1))
    return CheckReport(f"theorem{which}",
                       {"s": s, "cutoffs": list(cutoffs), "a": ctx.a, "b": ctx.b,
                        "tol": mpmath.nstr(tol_v, 4)},
                       "pass" if ok else "fail",
                       residuals[str(cutoffs[-1])], residuals, [])


def jg_gj_check(ctx: Context, k: int = 1, s: int = 0, cutoffs=(16, 24),
                tol=None, decay: int = 10, margin: int = 4,
                weight_cap: int = 12) -> CheckReport:
    """Both-ways current identity of the first model's generating operator.

    (-1)^{ak} P_1^{-(a-1)k} ... P_{a-1}^{-k} J_{ak} g
      = (-1)^{bk} R_1^{-(b-1)k} ... R_{b-1}^{-k} g J_{-bk}
    on matrix elements between states of weight <= min(cutoff - margin,
    weight_cap); Q-graded coefficients compared for m <= q_degree.
    Residuals are per-entry relative: the framing diagonal scales rows by
    q^{w0/2a}, which grows without bound as kappa goes negative, so only
    |lhs - rhs| / max(1, |lhs|, |rhs|) is size-independent.
    """
    ctx.require_approx_regime()
    bits = ctx.precision_bits
    P, R = ctx.big_p, ctx.big_r
    cl = Fraction(-1) ** (ctx.a * k)
    for i0, Pi in enumerate(P):
        cl *= Pi ** (-(ctx.a - 1 - i0) * k)
    cr = Fraction(-1) ** (ctx.b * k)
    for j0, Rj in enumerate(R):
        cr *= Rj ** (-(ctx.b - 1 - j0) * k)

    A, B = build_g(ctx, ModelKind.FIRST).halves()
    residuals = {}
    with mpmath.workprec(bits):
        clf, crf = frac_to_mpf(cl, bits), frac_to_mpf(cr, bits)
        for D in cutoffs:
            one = mpmath.mpf(1)
            nus = [lam for lam in partitions.enumerate_partitions(ctx.q_degree)]
            colA, colJA, colBT, colBTJ = {}, {}, {}, {}
            for nu in nus:
                av = _apply_chain(ctx, A, unit_vector(nu, one), s, D)
                colA[nu] = av
                colJA[nu] = apply_current(av, ctx.a * k, D)
                bt = _apply_chain(ctx, B, unit_vector(nu, one), s, D, transposed=True)
                colBT[nu] = bt
                colBTJ[nu] = apply_current(bt, ctx.b * k, D)
            wcap = min(D - margin, weight_cap)
            interior = [lam for lam in partitions.enumerate_partitions(wcap)]
            worst = mpmath.mpf(0)
            zero = mpmath.mpf(0)
            by_weight = [partitions.partitions_of_weight(m)
                         for m in range(ctx.q_degree + 1)]
            for lam in interior:
                for mu in interior:
                    for grade in by_weight:
                        lhs = clf * sum((colJA[nu].get(lam, zero)
                                         * colBT[nu].get(mu, zero)
                                         for nu in grade), zero)
                        rhs = crf * sum((colA[nu].get(lam, zero)
                                         * colBTJ[nu].get(mu, zero)
                                         for nu in grade), zero)
                        scale = max(mpmath.mpf(1), abs(lhs), abs(rhs))
                        worst = max(worst, abs(lhs - rhs) / scale)
            residuals[str(D)] = mpmath.nstr(worst, 8)
        tol_v = tol if tol is not None else mpmath.mpf(10) ** (-bits // 8)
        vals = [mpmath.mpf(residuals[str(D)]) for D in cutoffs]
        ok = vals[-1] < tol_v and all(
            vals[i + 1] <= vals[i] / decay or vals[i + 1] < tol_v / 100
            for i in range(len(vals) - 1))
    return CheckReport("jg_gj",
                       {"k": k, "s": s, "cutoffs": list(cutoffs),
                        "a": ctx.a, "b": ctx.b},
                       "pass" if ok else "fail",
                       residuals[str(cutoffs[-1])], residuals, [])


def fermionic_check(ctx: Context, model: ModelKind, s: int = 0) -> CheckReport:
    """Exact equality of the operator-product form with the partition sum.

    The bra chain of lowering vertex operators interleaved with P_i
    diagonals, the graded diagonal with the coupling exponential, and the
    ket chain with R_j diagonals reproduce (p_1 r_1)^{s(s+1)/2} times the
    partition sum, coefficient by coefficient; at charge 0 the constant
    is 1.  Everything here is a finite sum, so equality is exact.
    """
    model = ModelKind(model)
    if not ctx.normalized():
        raise ValueError("fermionic_check needs normalized parameters p_a = r_b = 1")
    primed = model is ModelKind.SECOND
    D = ctx.q_degree
    P, R = ctx.big_p, ctx.big_r

    left = [("gamma", +1, False)]
    for i in range(ctx.a - 1):
        left += [("lpow", P[i]), ("gamma", +1, False)]
    right = []
    for j in range(ctx.b - 1, 0, -1):
        right += [("gamma", -1, primed), ("lpow", R[j - 1])]
    right += [("gamma", -1, primed)]

    coeffs = vertex_coefficients(ctx, principal_spec(), D)
    coeffs_p = vertex_coefficients(ctx, principal_spec(), D, primed=True)

    def run(factors, vec, transposed):
        seq = factors if transposed else tuple(reversed(factors))
        for fac in seq:
            if fac[0] == "gamma":
                sgn = fac[1]
                if transposed:
                    sgn = -sgn
                cc = coeffs_p if fac[2] else coeffs
                vec = apply_vertex_exp(vec, cc, sgn, D)
            else:
                vec = {lam: v * fac[1] ** l0_eig(lam, s) for lam, v in vec.items()}
        return vec

    u = run(tuple(left), unit_vector((), Fraction(1)), transposed=True)
    v = run(tuple(right), unit_vector((), Fraction(1)), transposed=False)

    zs = z_series(ctx, model, s)
    jspec = jet_spec_for(ctx, model)
    offset = s * (s + 1) // 2
    prod_pr = Fraction(1)
    for x in P:
        prod_pr *= x
    for x in R:
        prod_pr *= x
    const = prod_pr ** offset

    failures = []
    for m in range(ctx.q_degree + 1):
        total = Jet(jspec)
        for lam in partitions.partitions_of_weight(m):
            if lam not in u or lam not in v:
                continue
            arg = Jet(jspec)
            for k in range(1, ctx.jet_symbols + 1):
                arg = arg + Jet.variable(jspec, f"t{k}", partitions.phi(ctx, k, lam, s))
                if model is ModelKind.SECOND:
                    arg = arg + Jet.variable(jspec, f"tb{k}",
                                             partitions.phi(ctx, -k, lam, s))
            total = total + jet_exp(arg) * (u[lam] * v[lam])
        want = zs.series.coeffs[m] * const
        if total != want:
            failures.append({"m": m, "got": repr(total), "want": repr(want)})
    return exact_report("fermionic_expression",
                        {"model": model.value, "s": s, "q_degree": ctx.q_degree},
                        failures)
