import random
from fractions import Fraction

import mpmath
import pytest

from orbicrystal.scalars import (ApproxScalar, Context, Jet, JetSpec, QSeries,
                                 coupling_symbols, frac_str, frac_to_mpf,
                                 jet_exp, parse_frac, qpow, series_add,
                                 series_exp, series_from_obj, series_inv,
                                 series_log, series_mul, series_to_obj)


def ctx11(u="1/2", **kw):
    return Context(a=1, b=1, u=Fraction(u), **kw)


class TestContext:
    def test_q_is_u_to_2ab(self):
        assert ctx11().q == Fraction(1, 4)
        assert Context(a=2, b=1, u=Fraction(1, 2)).q == Fraction(1, 16)

    def test_rejects_root_of_unity(self):
        for bad in (0, 1, -1):
            with pytest.raises(ValueError):
                Context(a=1, b=1, u=Fraction(bad))

    def test_rejects_zero_parameters(self):
        with pytest.raises(ValueError):
            Context(a=2, b=1, u=Fraction(1, 2), p=(Fraction(0), Fraction(1)))
        with pytest.raises(ValueError):
            Context(a=1, b=1, u=Fraction(1, 2), q0=0)

    def test_parameter_ratios(self):
        ctx = Context(a=3, b=2, u=Fraction(1, 2),
                      p=(Fraction(6), Fraction(2), Fraction(1)),
                      r=(Fraction(5), Fraction(1)))
        assert ctx.big_p == (Fraction(3), Fraction(2))
        assert ctx.big_r == (Fraction(5),)

    def test_q_constants(self):
        # a = b = 1: the two constants are 1 and q0
        ctx = ctx11(q0=Fraction(2, 3))
        assert ctx.q_constants() == (Fraction(1), Fraction(2, 3))
        # a = 2, b = 2 with explicit ratios
        ctx = Context(a=2, b=2, u=Fraction(1, 3),
                      p=(Fraction(3), Fraction(1)),
                      r=(Fraction(7), Fraction(1)), q0=Fraction(1, 2))
        P1, R1, Q0 = Fraction(3), Fraction(7), Fraction(1, 2)
        assert ctx.q_constants() == (1, P1, P1 * Q0, P1 * Q0 * R1)

    def test_monomial_v(self):
        ctx = Context(a=2, b=2, u=Fraction(1, 3),
                      p=(Fraction(3), Fraction(1)),
                      r=(Fraction(7), Fraction(1)), q0=Fraction(1, 2))
        assert ctx.monomial_v() == Fraction(3) * Fraction(7) * Fraction(1, 2)


class TestQpow:
    def test_half_power_is_u_ab(self):
        assert qpow(ctx11(), 1, 2) == Fraction(1, 2)

    def test_zero_exponent(self):
        assert qpow(ctx11(), 0, 1) == 1

    def test_fractional_orbifold_power(self):
        ctx = Context(a=2, b=1, u=Fraction(1, 2))
        assert ctx.q == Fraction(1, 16)
        assert qpow(ctx, 1, 4) == Fraction(1, 2)

    def test_rejects_bad_denominator(self):
        with pytest.raises(ValueError):
            qpow(ctx11(), 1, 3)

    def test_exponent_additivity(self):
        ctx = Context(a=2, b=3, u=Fraction(2, 3))
        rng = random.Random(7)
        two_ab = 2 * ctx.a * ctx.b
        dens = [d for d in range(1, two_ab + 1) if two_ab % d == 0]
        for _ in range(50):
            m, n = rng.randint(-6, 6), rng.randint(-6, 6)
            d1, d2 = rng.choice(dens), rng.choice(dens)
            lhs = qpow(ctx, m, d1) * qpow(ctx, n, d2)
            rhs = qpow(ctx, m * (two_ab // d1) + n * (two_ab // d2), two_ab)
            assert lhs == rhs


def _random_series(rng, n=6):
    return QSeries([Fraction(rng.randint(-5, 5), rng.randint(1, 5))
                    for _ in range(n)], 0)


class TestQSeries:
    def test_geometric_inverse(self):
        geometric = series_inv(QSeries([Fraction(1), Fraction(-1), 0, 0, 0, 0], 0))
        assert geometric.coeffs == [Fraction(1)] * 6

    def test_exp_of_zero(self):
        z = QSeries([Fraction(0)] * 5, 0)
        assert series_exp(z).coeffs[0] == 1
        assert all(c == 0 for c in series_exp(z).coeffs[1:])

    def test_log_exp_roundtrip(self):
        c = Fraction(3, 7)
        x = QSeries([Fraction(0), c, 0, 0, 0, 0], 0)
        assert series_log(series_exp(x)) == x

    def test_ring_axioms_random(self):
        rng = random.Random(11)
        for _ in range(25):
            x, y, z = (_random_series(rng) for _ in range(3))
            assert series_mul(x, series_add(y, z)) == \
                series_add(series_mul(x, y), series_mul(x, z))
            assert series_mul(x, y) == series_mul(y, x)
            assert series_mul(series_mul(x, y), z) == series_mul(x, series_mul(y, z))

    def test_offset_multiplication(self):
        x = QSeries([Fraction(1), Fraction(2)], 3)  # Q^3 + 2Q^4
        y = QSeries([Fraction(1), Fraction(1)], 1)  # Q + Q^2
        prod = series_mul(x, y)
        assert prod.offset == 4
        assert prod.coeff(4) == 1 and prod.coeff(5) == 3

    def test_inv_requires_invertible_term(self):
        with pytest.raises(ValueError):
            series_inv(QSeries([Fraction(0), Fraction(1)], 0))

    def test_exp_requires_zero_constant(self):
        with pytest.raises(ValueError):
            series_exp(QSeries([Fraction(1)], 0))

    def test_serialization_roundtrip(self):
        x = QSeries([Fraction(1), Fraction(-4, 9)], 2)
        obj = series_to_obj(x)
        assert obj == {"offset": 2, "coeffs": ["1", "-4/9"]}
        y = series_from_obj(obj)
        assert y == x and y.offset == 2


class TestJet:
    def spec(self, order=1, n=2, nbar=0):
        return JetSpec(coupling_symbols(n, nbar), order)

    def test_exp_order1(self):
        sp = self.spec(order=1, n=1)
        t1 = Jet.variable(sp, "t1")
        e = jet_exp(t1)
        assert e.coeff("1") == 1 and e.coeff("t1") == 1

    def test_exp_order2(self):
        sp = self.spec(order=2, n=1)
        e = jet_exp(Jet.variable(sp, "t1"))
        assert e.coeff("t1^2") == Fraction(1, 2)

    def test_exp_two_symbols(self):
        sp = JetSpec(coupling_symbols(1, 1), 1)
        e = jet_exp(Jet.variable(sp, "t1") + Jet.variable(sp, "tb1"))
        assert e.coeff("1") == 1 and e.coeff("t1") == 1 and e.coeff("tb1") == 1

    def test_exp_rejects_constant(self):
        sp = self.spec()
        with pytest.raises(ValueError):
            jet_exp(Jet.const(sp, Fraction(1)))

    def test_ring_truncation(self):
        sp = self.spec(order=1)
        t1, t2 = Jet.variable(sp, "t1"), Jet.variable(sp, "t2")
        assert not (t1 * t2)  # degree 2 truncated at order 1
        assert (1 + t1) * (1 - t1) == 1

    def test_inverse(self):
        sp = self.spec(order=2, n=1)
        x = Jet.const(sp, Fraction(2)) + Jet.variable(sp, "t1", Fraction(3))
        assert x * x.inverse() == 1


class TestApproxScalar:
    def test_bit_identical_reevaluation(self):
        def build():
            with mpmath.workprec(192):
                v = mpmath.mpf(1)
                for n in range(1, 60):
                    v = v * (1 - frac_to_mpf(Fraction(1, 3), 192) ** n) ** -n
            return ApproxScalar(v, 192)

        x, y = build(), build()
        assert mpmath.mp.prec  # mpmath alive
        assert x.value == y.value
        assert (x - y).value == 0

    def test_precision_mismatch_rejected(self):
        x = ApproxScalar(mpmath.mpf(1), 64)
        y = ApproxScalar(mpmath.mpf(1), 128)
        with pytest.raises(ValueError):
            _ = x + y


def test_frac_str_roundtrip():
    assert frac_str(Fraction(-4, 9)) == "-4/9"
    assert frac_str(Fraction(3)) == "3"
    assert parse_frac("7/2") == Fraction(7, 2)
