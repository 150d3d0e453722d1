"""Weighted Gaussian kernels ``s * exp(-1/2 (P x, x)) * N(R x, Q)`` and their algebra.

Composition rule
----------------
For the later kernel ``K1 = (s1, P1, Q1, R1)`` applied after ``K2 = (s2, P2, Q2, R2)``
started at ``x``, the Fourier transform of ``int K1_y(.) K2_x(dy)`` at ``z`` is

    s1 s2 exp(-1/2 x'P2 x - 1/2 z'Q1 z) * E[exp(-1/2 Y'P1 Y + i (R1'z)'Y)],

with ``Y ~ N(R2 x, Q2)``. Writing ``Q2 = L L'`` and ``Y = m + L xi`` the
expectation is a standard Gaussian integral. With ``M = I + Q2 P1`` (its
eigenvalues are those of ``I + L'P1 L`` and so are >= 1) it equals

    det(M)^{-1/2} exp(-1/2 m'P1 M^{-1} m + i w'M^{-1} m - 1/2 w'M^{-1} Q2 w),

where ``w = R1'z``. ``P1 M^{-1}`` and ``M^{-1} Q2`` are symmetric by the
push-through identity, and collecting terms gives

    s = s1 s2 det(M)^{-1/2}
    P = P2 + R2' P1 M^{-1} R2
    Q = Q1 + R1 M^{-1} Q2 R1'
    R = R1 M^{-1} R2

which reduces to the product/convolution rule when ``P1 = 0``. The same
integral with ``R2 = 0`` and mean ``m`` evolves a Gaussian initial measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonGaussianComposition, SingularCovariance
from .operators import PSD_RTOL, as_matrix, psd_tolerance, symmetrize

SINGULAR_COND = 1e12


def _vector(v, n, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected {n}")
    return v


def _is_singular(Q):
    if not np.any(Q):
        return True
    w = np.linalg.eigvalsh(Q)
    return w[0] <= 0 or w[-1] / w[0] >= SINGULAR_COND


def _require_psd(a, name, rtol):
    if a.size and np.linalg.eigvalsh(a)[0] < -psd_tolerance(a, rtol):
        raise NonGaussianComposition(f"{name} lost positive semidefiniteness")
    return a


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Gaussian measure with total mass ``mass``, mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = as_matrix(self.cov, "cov", mean.shape[0])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))
        object.__setattr__(self, "mass", float(self.mass))

    @property
    def dim(self):
        return self.mean.shape[0]

    def characteristic_functional(self, y):
        y = _vector(y, self.dim, "y")
        return self.mass * np.exp(1j * (self.mean @ y) - 0.5 * (y @ self.cov @ y))

    def second_moment(self):
        return self.mass * (float(np.trace(self.cov)) + float(self.mean @ self.mean))

    def sample(self, rng, size):
        return rng.multivariate_normal(self.mean, self.cov, size=size, method="eigh")


@dataclass(frozen=True, eq=False)
class PointMixture:
    """Finite weighted sum of Dirac masses."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatch("one weight per point required")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("mixture weights must be finite and positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def mass(self):
        return float(self.weights.sum())

    def second_moment(self):
        return float(self.weights @ np.sum(self.points**2, axis=1))

    @classmethod
    def dirac(cls, x):
        return cls(np.asarray(x, dtype=float).reshape(1, -1), [1.0])


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    components: tuple

    @property
    def mass(self):
        return float(sum(c.mass for c in self.components))

    def second_moment(self):
        return float(sum(c.second_moment() for c in self.components))

    def characteristic_functional(self, y):
        return complex(sum(c.characteristic_functional(y) for c in self.components))


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """The family ``x -> s exp(-1/2 (P x, x)) N(R x, Q)``."""

    s: float
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        R = as_matrix(self.R, "R")
        n = R.shape[0]
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "P", symmetrize(as_matrix(self.P, "P", n)))
        object.__setattr__(self, "Q", symmetrize(as_matrix(self.Q, "Q", n)))
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, n):
        return cls(1.0, np.zeros((n, n)), np.zeros((n, n)), np.eye(n))

    @property
    def dim(self):
        return self.R.shape[0]

    @property
    def is_degenerate(self):
        """True when ``Q`` is singular, i.e. the measure has no Lebesgue density."""
        return _is_singular(self.Q)

    def mass(self, x):
        x = _vector(x, self.dim, "x")
        return self.s * np.exp(-0.5 * (x @ self.P @ x))

    def measure_at(self, x):
        x = _vector(x, self.dim, "x")
        return GaussianMeasure(self.R @ x, self.Q, self.mass(x))

    def characteristic_functional(self, x, y):
        return characteristic_functional(self, x, y)

    def density(self, x, y):
        return density(self, x, y)

    def to_dict(self):
        return {
            "dim": self.dim,
            "s": self.s,
            "P": self.P.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        k = cls(d["s"], d["P"], d["Q"], d["R"])
        if "dim" in d and d["dim"] != k.dim:
            raise DimensionMismatch("dim field disagrees with matrix shapes")
        return k


def characteristic_functional(K, x, y):
    """Fourier transform of ``K_x`` at ``y``."""
    x = _vector(x, K.dim, "x")
    y = _vector(y, K.dim, "y")
    log_mass = np.log(K.s) - 0.5 * (x @ K.P @ x)
    return complex(np.exp(log_mass + 1j * ((K.R @ x) @ y) - 0.5 * (y @ K.Q @ y)))


def density(K, x, y):
    """Lebesgue density of ``K_x`` at ``y``; atoms raise :class:`SingularCovariance`."""
    x = _vector(x, K.dim, "x")
    y = _vector(y, K.dim, "y")
    if K.is_degenerate:
        raise SingularCovariance("kernel covariance is singular; the measure has an atom")
    L = np.linalg.cholesky(K.Q)
    z = np.linalg.solve(L, y - K.R @ x)
    n = K.dim
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    log_val = (
        np.log(K.s)
        - 0.5 * (x @ K.P @ x)
        - 0.5 * n * np.log(2 * np.pi)
        - 0.5 * log_det
        - 0.5 * (z @ z)
    )
    return float(np.exp(log_val))


def compose(later, earlier, psd_rtol=PSD_RTOL):
    """Kernel of ``int later_y(.) earlier_x(dy)`` (see module docstring)."""
    if later.dim != earlier.dim:
        raise DimensionMismatch("kernels have different dimensions")
    n = later.dim
    M = np.eye(n) + earlier.Q @ later.P
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise NonGaussianComposition("I + Q P is not positive definite")
    P_eff = np.linalg.solve(M.T, later.P).T  # P1 M^{-1}
    Q_eff = np.linalg.solve(M, earlier.Q)  # M^{-1} Q2
    s = later.s * earlier.s * np.exp(-0.5 * logdet)
    P = symmetrize(earlier.P + earlier.R.T @ P_eff @ earlier.R)
    Q = symmetrize(later.Q + later.R @ Q_eff @ later.R.T)
    R = later.R @ np.linalg.solve(M, earlier.R)
    _require_psd(P, "composed P", psd_rtol)
    _require_psd(Q, "composed Q", psd_rtol)
    return GaussianKernel(s, P, Q, R)


def apply_to_initial(K, mu0, psd_rtol=PSD_RTOL):
    """Evolve an initial measure: ``int K_x(.) mu0(dx)``.

    Gaussian ``mu0`` gives a :class:`GaussianMeasure` carrying the total
    mass; point mixtures give a :class:`GaussianMixture` (one component per
    atom, singular covariance allowed).
    """
    if isinstance(mu0, PointMixture):
        if mu0.dim != K.dim:
            raise DimensionMismatch("initial measure and kernel differ in dimension")
        comps = []
        for x, w in zip(mu0.points, mu0.weights):
            m = K.measure_at(x)
            comps.append(GaussianMeasure(m.mean, m.cov, w * m.mass))
        return GaussianMixture(tuple(comps))
    if not isinstance(mu0, GaussianMeasure):
        raise TypeError(f"unsupported initial measure {type(mu0).__name__}")
    if mu0.dim != K.dim:
        raise DimensionMismatch("initial measure and kernel differ in dimension")
    n = K.dim
    M = np.eye(n) + mu0.cov @ K.P
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise NonGaussianComposition("I + Sigma P is not positive definite")
    shifted = np.linalg.solve(M, mu0.mean)
    mass = mu0.mass * K.s * np.exp(-0.5 * logdet - 0.5 * (mu0.mean @ K.P @ shifted))
    cov = symmetrize(K.Q + K.R @ np.linalg.solve(M, mu0.cov) @ K.R.T)
    _require_psd(cov, "evolved covariance", psd_rtol)
    return GaussianMeasure(K.R @ shifted, cov, mass)
