import numpy as np
import pytest

from sdesem.errors import NotPositiveDefinite, ShapeError, ValidationError
from sdesem.matrixcalc import (
    chol_pd,
    duplication,
    logdet_pd,
    solve_pd,
    unvech,
    vech,
)


def vech_bruteforce(a: np.ndarray) -> np.ndarray:
    # independent oracle: explicit double loop in column-major order
    p = a.shape[0]
    out = []
    for j in range(p):
        for i in range(j, p):
            out.append(a[i, j])
    return np.array(out)


def random_pd(rng, p, jitter=0.5):
    r = rng.standard_normal((p, p))
    return r @ r.T + jitter * np.eye(p)


class TestVech:
    def test_p2_definition(self):
        a = np.array([[1.0, 2.0], [2.0, 3.0]])
        assert np.array_equal(vech(a), np.array([1.0, 2.0, 3.0]))

    def test_p1(self):
        assert np.array_equal(vech(np.array([[7.0]])), np.array([7.0]))

    def test_matches_bruteforce_and_duplication_identity(self):
        rng = np.random.default_rng(42)
        for p in range(1, 7):
            d = duplication(p).d
            for _ in range(100):
                a = rng.standard_normal((p, p))
                a = a + a.T
                v = vech(a)
                assert np.array_equal(v, vech_bruteforce(a))
                # D is 0/1 so D @ vech must reproduce vec exactly
                assert np.array_equal(d @ v, a.flatten(order="F"))

    def test_unvech_roundtrip(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((5, 5))
        a = a + a.T
        assert np.array_equal(unvech(vech(a)), a)

    def test_rejects_asymmetric(self):
        with pytest.raises(ShapeError):
            vech(np.array([[1.0, 2.0], [3.0, 4.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ShapeError):
            vech(np.zeros((2, 3)))


class TestDuplication:
    def test_p1(self):
        pair = duplication(1)
        assert np.array_equal(pair.d, np.array([[1.0]]))
        assert np.array_equal(pair.d_plus, np.array([[1.0]]))

    def test_p2_enumerated(self):
        # vec order (a11,a21,a12,a22), vech order (a11,a21,a22)
        expected = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        assert np.array_equal(duplication(2).d, expected)

    def test_left_inverse(self):
        for p in range(1, 7):
            pair = duplication(p)
            pbar = p * (p + 1) // 2
            err = np.abs(pair.d_plus @ pair.d - np.eye(pbar)).max()
            assert err < 1e-12

    def test_matches_pinv(self):
        for p in range(1, 7):
            pair = duplication(p)
            assert np.allclose(pair.d_plus, np.linalg.pinv(pair.d), atol=1e-12)

    def test_p0_domain_error(self):
        with pytest.raises(ValidationError):
            duplication(0)


class TestLogdet:
    def test_identity(self):
        assert logdet_pd(np.eye(4)) == 0.0

    def test_diag23(self):
        assert logdet_pd(np.diag([2.0, 3.0])) == pytest.approx(
            np.log(6.0), rel=1e-12
        )

    def test_random_pd_eigenvalue_oracle(self):
        rng = np.random.default_rng(7)
        a = random_pd(rng, 5)
        expected = float(np.sum(np.log(np.linalg.eigvalsh(a))))
        assert logdet_pd(a) == pytest.approx(expected, rel=1e-10)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            logdet_pd(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_pivot_tolerance(self):
        # second pivot is ~1e-14, far below 1e-12 * max diagonal
        a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
        with pytest.raises(NotPositiveDefinite):
            logdet_pd(a)

    def test_inverse_cancels(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = random_pd(rng, 6)
            assert np.linalg.cond(a) < 1e6
            total = logdet_pd(a) + logdet_pd(np.linalg.inv(a))
            assert abs(total) < 1e-9


def adjugate_inverse_3x3(a: np.ndarray) -> np.ndarray:
    # independent oracle: cofactor expansion at p=3
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return cof.T / np.linalg.det(a)


class TestSolve:
    def test_identity(self):
        b = np.arange(6.0).reshape(3, 2)
        assert np.allclose(solve_pd(np.eye(3), b), b)

    def test_scalar(self):
        assert np.allclose(solve_pd(np.array([[2.0]]), np.array([4.0])), [2.0])

    def test_inverse_adjugate_oracle(self):
        rng = np.random.default_rng(13)
        a = random_pd(rng, 3)
        got = solve_pd(a, np.eye(3))
        assert np.allclose(got, adjugate_inverse_3x3(a), rtol=1e-10)

    def test_trace_solve_matches_inverse(self):
        rng = np.random.default_rng(17)
        a = random_pd(rng, 4)
        q = random_pd(rng, 4)
        got = float(np.trace(chol_pd(a).solve(q)))
        assert got == pytest.approx(float(np.trace(np.linalg.inv(a) @ q)), rel=1e-10)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            solve_pd(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2))
