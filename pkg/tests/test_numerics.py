import math

import numpy as np
import pytest

from diffden.errors import NotPositiveDefinite
from diffden.numerics import (Rng, cholesky, solve_spd, spd_logdet,
                              standard_normal)


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_two_by_two_reconstruction(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        lower = cholesky(a)
        assert np.allclose(lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]])
        err = np.linalg.norm(lower @ lower.T - a) / np.linalg.norm(a)
        assert err <= 1e-10

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.49, 1.0]]))

    def test_recovers_factor(self):
        gen = np.random.default_rng(7)
        for _ in range(20):
            n = int(gen.integers(2, 9))
            lower = np.tril(gen.normal(size=(n, n)))
            lower[np.diag_indices(n)] = 0.5 + gen.random(n)
            again = cholesky(lower @ lower.T)
            assert np.max(np.abs(again - lower)) <= 1e-9

    def test_logdet_matches_slogdet(self):
        gen = np.random.default_rng(3)
        b = gen.normal(size=(6, 6))
        a = b @ b.T + 6 * np.eye(6)
        sign, ref = np.linalg.slogdet(a)
        assert sign == 1.0
        assert abs(spd_logdet(a) - ref) < 1e-10


class TestSolve:
    def test_residual_bound(self):
        gen = np.random.default_rng(11)
        for _ in range(20):
            n = int(gen.integers(2, 30))
            b_mat = gen.normal(size=(n, n))
            a = b_mat @ b_mat.T + 1e-3 * np.eye(n)
            if np.linalg.cond(a) > 1e6:
                continue
            rhs = gen.normal(size=n)
            x = solve_spd(a, rhs)
            assert np.max(np.abs(a @ x - rhs)) <= 1e-8 * max(np.max(np.abs(rhs)), 1.0)

    def test_matrix_rhs(self):
        a = np.array([[4.0, 1.0], [1.0, 3.0]])
        rhs = np.eye(2)
        inv = solve_spd(a, rhs)
        assert np.allclose(a @ inv, np.eye(2), atol=1e-12)


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(42).standard_normal(5)
        b = Rng(42).standard_normal(5)
        assert np.array_equal(a, b)

    def test_seed_changes_stream(self):
        assert not np.array_equal(Rng(1).standard_normal(5), Rng(2).standard_normal(5))

    def test_moments(self):
        z = standard_normal(Rng(5), 100_000)
        assert abs(z.mean()) < 0.02
        assert abs(z.var() - 1.0) < 0.03

    def test_finite_and_odd_length(self):
        z = Rng(9).standard_normal(10001)
        assert z.shape == (10001,)
        assert np.all(np.isfinite(z))

    def test_split_deterministic_and_distinct(self):
        kids = Rng(123).split(3)
        again = Rng(123).split(3)
        draws = [k.standard_normal(4) for k in kids]
        for d, e in zip(draws, (k.standard_normal(4) for k in again)):
            assert np.array_equal(d, e)
        for i in range(3):
            for j in range(i + 1, 3):
                assert not np.array_equal(draws[i], draws[j])

    def test_split_streams_look_independent(self):
        a, b = Rng(77).split(2)
        x, y = a.standard_normal(50_000), b.standard_normal(50_000)
        corr = np.corrcoef(x, y)[0, 1]
        assert abs(corr) < 0.02

    def test_child_path_keys(self):
        r = Rng(10)
        assert np.array_equal(r.child(1, 2).uniform(3), Rng(10).child(1, 2).uniform(3))
        assert not np.array_equal(r.child(1, 2).uniform(3), r.child(2, 1).uniform(3))

    def test_uniform_range_and_integers(self):
        r = Rng(4)
        u = r.uniform(1000, -2.0, 3.0)
        assert u.min() >= -2.0 and u.max() < 3.0
        k = r.integers(0, 10, 100)
        assert k.min() >= 0 and k.max() < 10
