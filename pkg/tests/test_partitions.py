from fractions import Fraction

import pytest

from orbicrystal.partitions import (conjugate, enumerate_partitions, kappa,
                                    phi, weight)
from orbicrystal.scalars import Context


def partition_numbers(n_max):
    """Independent oracle: p(n) by the pentagonal-number recurrence."""
    p = [1] + [0] * n_max
    for n in range(1, n_max + 1):
        total, k = 0, 1
        while True:
            g1 = k * (3 * k - 1) // 2
            g2 = k * (3 * k + 1) // 2
            if g1 > n:
                break
            sign = 1 if k % 2 == 1 else -1
            total += sign * p[n - g1]
            if g2 <= n:
                total += sign * p[n - g2]
            k += 1
        p[n] = total
    return p


CTX = Context(a=1, b=1, u=Fraction(1, 2))


class TestEnumeration:
    def test_zero(self):
        assert enumerate_partitions(0) == [()]

    def test_counts_match_recurrence(self):
        parts = enumerate_partitions(10)
        oracle = partition_numbers(10)
        for d in range(11):
            assert sum(1 for lam in parts if weight(lam) == d) == oracle[d]

    def test_counts_up_to_four(self):
        oracle = partition_numbers(4)
        assert oracle[:5] == [1, 1, 2, 3, 5]

    def test_total_count_ten(self):
        assert len(enumerate_partitions(10)) == sum(partition_numbers(10))

    def test_order_is_graded_then_lex(self):
        parts = enumerate_partitions(4)
        grading = [weight(lam) for lam in parts]
        assert grading == sorted(grading)
        w4 = [lam for lam in parts if weight(lam) == 4]
        assert w4 == sorted(w4)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            enumerate_partitions(-1)


class TestConjugate:
    def test_examples(self):
        assert conjugate((3, 1)) == (2, 1, 1)
        assert conjugate(()) == ()
        assert conjugate((2, 2)) == (2, 2)

    def test_involution(self):
        for lam in enumerate_partitions(8):
            assert conjugate(conjugate(lam)) == lam


class TestKappa:
    def test_examples(self):
        assert kappa(()) == 0
        assert kappa((2,)) == 2
        assert kappa((2, 1)) == 0

    def test_direct_sum_agrees(self):
        # independent route: literal sum of (lam_i - i + 1/2)^2 - (-i + 1/2)^2
        for lam in enumerate_partitions(8):
            direct = sum((Fraction(2 * part - 2 * i - 1, 2)) ** 2
                         - Fraction(-2 * i - 1, 2) ** 2
                         for i, part in enumerate(lam))
            assert kappa(lam) == direct

    def test_even_and_antisymmetric_under_conjugation(self):
        for lam in enumerate_partitions(8):
            k = kappa(lam)
            assert k % 2 == 0
            assert kappa(conjugate(lam)) == -k


class TestPhi:
    def test_empty_at_origin(self):
        assert phi(CTX, 1, (), 0) == 0
        assert phi(CTX, 3, (), 0) == 0

    def test_empty_at_charge_one(self):
        assert phi(CTX, 1, (), 1) == CTX.q

    def test_single_box(self):
        q = CTX.q
        assert phi(CTX, 1, (1,), 0) == q - 1

    def test_padding_invariance(self):
        # the closed tail makes explicit zero rows a no-op
        q = CTX.q
        for lam in [(2, 1), (3,), ()]:
            for k in (1, 2, -1):
                for s in (-2, 0, 1):
                    base = phi(CTX, k, lam, s)
                    padded = sum(q ** (k * (part + s - i)) - q ** (k * (s - i))
                                 for i, part in enumerate(tuple(lam) + (0,) * 5))
                    padded += q ** k * (1 - q ** (k * s)) / (1 - q ** k)
                    assert base == padded

    def test_rejects_zero_index(self):
        with pytest.raises(ValueError):
            phi(CTX, 0, (1,), 0)

    def test_charge_sum_identity(self):
        # tail term equals the explicit geometric sum over the charge
        q = CTX.q
        for k in (1, 2, 3, -1, -2):
            for s in range(-3, 4):
                if s >= 0:
                    explicit = sum(q ** (k * j) for j in range(1, s + 1))
                else:
                    explicit = -sum(q ** (k * j) for j in range(s + 1, 1))
                assert phi(CTX, k, (), s) == explicit
