import numpy as np
import pytest

from fracjt.precoding import (
    SingularChannelError,
    gram_eigenvalues,
    row_powers,
    zf_rate,
    zf_weights,
)


def random_channel(rng, n=1):
    h = (rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2)))
    return h / np.sqrt(2.0)


class TestZfWeights:
    def test_identity(self):
        w = zf_weights(np.eye(2, dtype=complex))
        assert np.allclose(w, np.eye(2))

    def test_diagonal(self):
        w = zf_weights(np.diag([2.0 + 0j, 4.0 + 0j]))
        assert np.allclose(w, np.diag([0.5, 0.25]))

    def test_upper_triangular_multiplies_back(self):
        h = np.array([[1, 1], [0, 1]], dtype=complex)
        w = zf_weights(h)
        assert np.allclose(w, np.array([[1, -1], [0, 1]]))
        assert np.allclose(h @ w, np.eye(2), atol=1e-12)

    def test_singular_raises(self):
        with pytest.raises(SingularChannelError):
            zf_weights(np.array([[1, 1], [2, 2]], dtype=complex))

    def test_zero_interference(self):
        rng = np.random.default_rng(1)
        for h in random_channel(rng, 50):
            if abs(np.linalg.det(h)) < 1e-3:
                continue
            prod = h @ zf_weights(h)
            off = np.abs(prod - np.eye(2))
            assert off.max() < 1e-9


class TestRowPowers:
    def test_identity(self):
        assert np.allclose(row_powers(np.eye(2, dtype=complex)), np.eye(2))

    def test_squared_magnitudes(self):
        w = np.array([[1, -1], [0, 1]], dtype=complex)
        assert np.allclose(row_powers(w), np.array([[1, 1], [0, 1]]))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for h in random_channel(rng, 20):
            assert np.all(row_powers(h) >= 0)


class TestZfRate:
    def test_zero_power(self):
        assert zf_rate(0.0, 1.0) == 0.0

    def test_unit_snr(self):
        assert zf_rate(2.5, 2.5) == pytest.approx(1.0)

    def test_snr_three(self):
        assert zf_rate(3.0, 1.0) == pytest.approx(2.0)

    def test_negative_power_raises(self):
        with pytest.raises(ValueError):
            zf_rate(-0.1, 1.0)


class TestGramEigenvalues:
    def test_identity(self):
        assert gram_eigenvalues(np.eye(2, dtype=complex)) == (1.0, 1.0)

    def test_diagonal(self):
        rho = gram_eigenvalues(np.diag([2.0 + 0j, 3.0 + 0j]))
        assert rho == (9.0, 4.0)

    def test_characteristic_identities(self):
        rng = np.random.default_rng(3)
        for h in random_channel(rng, 50):
            r1, r2 = gram_eigenvalues(h)
            assert r1 >= r2 >= 0
            assert r1 * r2 == pytest.approx(abs(np.linalg.det(h)) ** 2, abs=1e-9)
            assert r1 + r2 == pytest.approx(np.sum(np.abs(h) ** 2), abs=1e-9)

    def test_unitary_invariance(self):
        rng = np.random.default_rng(4)
        theta = 0.7
        u = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]],
            dtype=complex,
        )
        for h in random_channel(rng, 20):
            r = gram_eigenvalues(h)
            ru = gram_eigenvalues(u @ h)
            assert np.allclose(r, ru, atol=1e-9)
