import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from gaussflow.errors import DimensionMismatch, SingularCovariance
from gaussflow.flow import evolve
from gaussflow.kernel import (
    GaussianKernel,
    GaussianMeasure,
    PointMixture,
    apply_to_initial,
    compose,
)
from gaussflow.operators import random_operator_set

from conftest import random_psd


def random_kernel(rng, n, with_P=True):
    P = random_psd(rng, n, 0.5) if with_P else np.zeros((n, n))
    return GaussianKernel(rng.uniform(0.5, 2.0), P, random_psd(rng, n) + 0.1 * np.eye(n),
                          rng.standard_normal((n, n)))


def assert_kernels_close(a, b, tol):
    assert abs(a.s - b.s) <= tol * abs(b.s)
    for name in "PQR":
        A, Bm = getattr(a, name), getattr(b, name)
        assert np.linalg.norm(A - Bm) <= tol * max(1.0, np.linalg.norm(Bm)), name


def cf_by_quadrature(s, P, mean, var, x, z, weight):
    """1-D oracle: int s e^{-P x^2/2} N(y; mean, var) weight(y) e^{i z y} dy, real and imaginary parts."""
    sd = math.sqrt(var)
    base = lambda y: weight(y) * math.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)
    lo, hi = mean - 12 * sd, mean + 12 * sd
    re = quad(lambda y: base(y) * math.cos(z * y), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    im = quad(lambda y: base(y) * math.sin(z * y), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    return s * math.exp(-0.5 * P * x * x) * complex(re, im)


class TestCharacteristicFunctional:
    def test_identity_kernel_is_plane_wave(self):
        K = GaussianKernel.identity(2)
        x, y = np.array([0.3, -1.0]), np.array([2.0, 0.5])
        assert K.characteristic_functional(x, y) == pytest.approx(np.exp(1j * x @ y), abs=1e-15)

    def test_zero_frequency_is_mass(self, rng):
        K = random_kernel(rng, 3)
        x = rng.standard_normal(3)
        assert K.characteristic_functional(x, np.zeros(3)).real == pytest.approx(K.mass(x), rel=1e-14)

    def test_one_dimensional_against_quadrature(self):
        K = GaussianKernel(1.3, [[0.4]], [[0.7]], [[-0.8]])
        x, y = 0.9, 1.7
        oracle = cf_by_quadrature(1.3, 0.4, -0.8 * x, 0.7, x, y, lambda _: 1.0)
        assert K.characteristic_functional([x], [y]) == pytest.approx(oracle, abs=1e-12)

    def test_dimension_checked(self):
        with pytest.raises(DimensionMismatch):
            GaussianKernel.identity(2).characteristic_functional([1.0], [1.0, 2.0])


class TestDensity:
    def test_standard_normal_peak(self):
        K = GaussianKernel(1.0, [[0.0]], [[1.0]], [[1.0]])
        assert K.density([0.0], [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    def test_integrates_to_mass(self):
        K = GaussianKernel(2.0, [[0.5]], [[0.3]], [[1.5]])
        total = quad(lambda y: K.density([1.0], [y]), -20, 20, epsabs=1e-13)[0]
        assert total == pytest.approx(K.mass([1.0]), rel=1e-11)

    def test_atom_raises(self):
        with pytest.raises(SingularCovariance):
            GaussianKernel.identity(2).density([0, 0], [0, 0])


class TestCompose:
    def test_identity_is_neutral(self, rng):
        K = random_kernel(rng, 3)
        I = GaussianKernel.identity(3)
        assert_kernels_close(compose(K, I), K, 1e-13)
        assert_kernels_close(compose(I, K), K, 1e-13)

    def test_unweighted_kernels_convolve(self):
        # P = 0: covariance adds after pushing through R, mass multiplies
        K1 = GaussianKernel(2.0, [[0.0]], [[1.0]], [[3.0]])
        K2 = GaussianKernel(0.5, [[0.0]], [[2.0]], [[0.5]])
        K = compose(K1, K2)
        assert K.s == pytest.approx(1.0)
        assert K.Q[0, 0] == pytest.approx(1.0 + 9.0 * 2.0)
        assert K.R[0, 0] == pytest.approx(1.5)
        assert K.P[0, 0] == 0.0

    @pytest.mark.parametrize("x,z", [(0.0, 0.0), (1.0, 0.5), (-0.7, 2.0)])
    def test_one_dimensional_against_quadrature(self, x, z):
        K1 = GaussianKernel(1.2, [[0.8]], [[0.5]], [[0.6]])
        K2 = GaussianKernel(0.9, [[0.3]], [[1.4]], [[-1.1]])
        weight = lambda y: 1.2 * math.exp(-0.4 * y * y) * math.exp(-0.25 * z * z)
        # inner: K1_y at frequency z, i.e. s1 e^{-P1 y^2/2} e^{i R1 y z - Q1 z^2/2}
        oracle = cf_by_quadrature(0.9, 0.3, -1.1 * x, 1.4, x, 0.6 * z, weight)
        got = compose(K1, K2).characteristic_functional([x], [z])
        assert got == pytest.approx(oracle, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(1, 6))
    def test_associative(self, seed, n):
        rng = np.random.default_rng(seed)
        a, b, c = (random_kernel(rng, n) for _ in range(3))
        assert_kernels_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)

    def test_small_time_limit(self):
        # K(t) -> identity linearly in t
        ops = random_operator_set(3, seed=2)
        I = GaussianKernel.identity(3)
        errs = []
        for t in (1e-2, 1e-3, 1e-4):
            K = evolve(ops, t)
            errs.append(max(abs(K.s - 1), *(np.linalg.norm(getattr(K, m) - getattr(I, m)) for m in "PQR")))
        assert errs[0] / errs[1] == pytest.approx(10, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(10, rel=0.1)


class TestApplyToInitial:
    def test_dirac_gives_the_fundamental_solution(self, rng):
        K = random_kernel(rng, 2)
        x = np.array([0.4, -1.2])
        mix = apply_to_initial(K, PointMixture.dirac(x))
        (comp,) = mix.components
        np.testing.assert_allclose(comp.mean, K.R @ x)
        np.testing.assert_allclose(comp.cov, K.Q)
        assert comp.mass == pytest.approx(K.mass(x))

    def test_unweighted_gaussian(self):
        K = GaussianKernel(1.0, np.zeros((2, 2)), np.eye(2), 2 * np.eye(2))
        out = apply_to_initial(K, GaussianMeasure([1.0, 0.0], np.diag([1.0, 3.0])))
        np.testing.assert_allclose(out.mean, [2.0, 0.0])
        np.testing.assert_allclose(out.cov, np.diag([5.0, 13.0]))
        assert out.mass == pytest.approx(1.0)

    @pytest.mark.parametrize("z", [0.0, 0.8, -1.5])
    def test_weighted_gaussian_against_quadrature(self, z):
        K = GaussianKernel(1.1, [[0.6]], [[0.4]], [[0.9]])
        mu0 = GaussianMeasure([0.5], [[2.0]], mass=0.7)
        weight = lambda x: 1.1 * math.exp(-0.3 * x * x) * math.exp(-0.2 * z * z)
        oracle = 0.7 * cf_by_quadrature(1.0, 0.0, 0.5, 2.0, 0.0, 0.9 * z, weight)
        assert apply_to_initial(K, mu0).characteristic_functional([z]) == pytest.approx(oracle, abs=1e-12)

    def test_matches_composition_with_gaussian_kernel(self, rng):
        # a centred Gaussian initial measure is the x=0 slice of a kernel with R=0
        K = random_kernel(rng, 3)
        cov = random_psd(rng, 3) + 0.2 * np.eye(3)
        out = apply_to_initial(K, GaussianMeasure(np.zeros(3), cov, mass=1.5))
        via = compose(K, GaussianKernel(1.5, np.zeros((3, 3)), cov, np.zeros((3, 3))))
        np.testing.assert_allclose(out.cov, via.Q, rtol=1e-12)
        y = rng.standard_normal(3)
        assert out.characteristic_functional(y) == pytest.approx(
            via.characteristic_functional(np.zeros(3), y), rel=1e-12)


def test_kernel_record_round_trip(rng):
    K = random_kernel(rng, 3)
    back = GaussianKernel.from_dict(K.to_dict())
    assert_kernels_close(back, K, 0.0)
    bad = K.to_dict() | {"dim": 4}
    with pytest.raises(DimensionMismatch):
        GaussianKernel.from_dict(bad)
