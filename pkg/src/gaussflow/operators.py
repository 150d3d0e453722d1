"""Dense operator arithmetic for finite-dimensional truncations.

Symmetric and general matrices are plain ``numpy`` arrays; the helpers here
validate them, and :class:`OperatorSet` bundles the generators ``(B, C, D, alpha)``
of the evolution equation at a fixed dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NegativeSpectrum,
    NotPSD,
    NotSymmetric,
    SeriesDivergence,
)

PSD_RTOL = 1e-10
SYM_RTOL = 1e-12

EVEN_KINDS = ("cosh", "sech", "tanh_over_sqrt")


def as_matrix(a, name="matrix", dim=None):
    """Return ``a`` as a finite square float array, checking the dimension."""
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise DimensionMismatch(f"{name} has dim {m.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def symmetrize(a):
    return 0.5 * (a + a.T)


def psd_tolerance(a, rtol=PSD_RTOL):
    """Eigenvalue floor ``-rtol * ||a||_2`` used for the PSD test."""
    return rtol * float(np.linalg.norm(a, 2)) if a.size else 0.0


def check_symmetric(a, name="matrix", rtol=SYM_RTOL):
    """Validate symmetry to ``rtol`` (relative, max-norm) and return the symmetric part."""
    a = as_matrix(a, name)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > rtol * max(scale, np.finfo(float).tiny):
        raise NotSymmetric(f"{name} is not symmetric (asymmetry {asym:.3e})")
    return symmetrize(a)


def check_psd(a, name="matrix", rtol=PSD_RTOL):
    """Raise :class:`NotPSD` unless every eigenvalue is at least ``-rtol * ||a||_2``."""
    if a.size == 0:
        return a
    w = np.linalg.eigvalsh(a)
    lam_min = float(w[0])
    # for a symmetric matrix the spectral norm is the largest |eigenvalue|
    if lam_min < -rtol * float(np.max(np.abs(w))):
        raise NotPSD(f"{name} has eigenvalue {lam_min:.6g} below the PSD floor")
    return a


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Validated generators of the parabolic measure equation.

    Build instances through :func:`validate_operator_set`; the constructor
    itself performs no checks.
    """

    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    alpha: float = 0.0
    trace_B: float = field(init=False)
    trace_D: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "trace_B", float(np.trace(self.B)))
        object.__setattr__(self, "trace_D", float(np.trace(self.D)))
        for a in (self.B, self.C, self.D):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.B.shape[0]

    @property
    def c_is_zero(self):
        return not np.any(self.C)

    @property
    def d_is_zero(self):
        return not np.any(self.D)

    def replace(self, **changes):
        kw = dict(B=self.B, C=self.C, D=self.D, alpha=self.alpha)
        kw.update(changes)
        return validate_operator_set(**kw)

    def to_dict(self):
        return {
            "dim": self.dim,
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "alpha": self.alpha,
            "trace_B": self.trace_B,
            "trace_D": self.trace_D,
        }


def validate_operator_set(B, C, D, alpha=0.0, psd_rtol=PSD_RTOL):
    """Check shapes, symmetry and positivity of ``B`` and ``C`` and bundle them."""
    B = as_matrix(B, "B")
    n = B.shape[0]
    if n < 1:
        raise DimensionMismatch("dimension must be at least 1")
    C = as_matrix(C, "C", n)
    D = as_matrix(D, "D", n)
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    B = check_psd(check_symmetric(B, "B"), "B", psd_rtol)
    C = check_psd(check_symmetric(C, "C"), "C", psd_rtol)
    return OperatorSet(B=B, C=C, D=D.copy(), alpha=alpha)


def diagonal_operator(values):
    return np.diag(np.asarray(values, dtype=float))


def power_law_spectrum(p, n):
    """Eigenvalues ``k**-p`` for ``k = 1..n``."""
    return np.arange(1, n + 1, dtype=float) ** (-float(p))


def oscillator_operators(masses, stiffness, h=1.0):
    """Diffusion and potential matrices of ``n`` uncoupled oscillators.

    Returns ``(B, C)`` with ``B = diag(1/(h m_j))`` and ``C = diag(k_j/h)``.
    """
    m = np.asarray(masses, dtype=float)
    k = np.asarray(stiffness, dtype=float)
    if m.shape != k.shape:
        raise DimensionMismatch("masses and stiffness must have the same length")
    return np.diag(1.0 / (h * m)), np.diag(k / h)


def matrix_exponential(M, t=1.0):
    """``exp(t M)`` via scaling and squaring Pade (scipy)."""
    M = as_matrix(M, "M")
    return scipy.linalg.expm(float(t) * M)


def conjugated_integral(B, D, t, psd_rtol=PSD_RTOL):
    """Integral of ``exp(D^T s) B exp(D s)`` over ``s`` in ``[0, t]``.

    Uses the block exponential of ``[[-D^T, B], [0, D]]``: its upper-right
    block ``G`` and lower-right block ``exp(D t)`` give the integral as
    ``exp(D t)^T G``.
    """
    B = as_matrix(B, "B")
    n = B.shape[0]
    D = as_matrix(D, "D", n)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return np.zeros((n, n))
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -D.T
    block[:n, n:] = B
    block[n:, n:] = D
    F = scipy.linalg.expm(t * block)
    Q = symmetrize(F[n:, n:].T @ F[:n, n:])
    return check_psd(Q, "conjugated integral", psd_rtol)


# ---------------------------------------------------------------------------
# even functions of sqrt(X), X = C B

def _scalar_even(kind, lam, t):
    lam = np.maximum(lam, 0.0)
    r = t * np.sqrt(lam)
    if kind == "cosh":
        return np.cosh(r)
    if kind == "sech":
        return 1.0 / np.cosh(r)
    # tanh(t sqrt(lam)) / sqrt(lam); series near zero keeps full accuracy
    small = r < 1e-4
    safe = np.where(small, 1.0, lam)
    out = np.tanh(r) / np.sqrt(safe)
    x = t * t * lam
    series = t * (1.0 - x / 3.0 + 2.0 * x * x / 15.0)
    return np.where(small, series, out)


def _check_spectrum(X, rtol):
    if X.size == 0:
        return
    ev = np.linalg.eigvals(X)
    scale = max(float(np.linalg.norm(X, 2)), np.finfo(float).tiny)
    if np.min(ev.real) < -rtol * scale or np.max(np.abs(ev.imag)) > 1e-6 * scale:
        raise NegativeSpectrum(
            f"spectrum of X not real non-negative (min real part {np.min(ev.real):.3e})"
        )


def _similarity_route(factors, kinds, t, max_cond, rtol):
    """Evaluate f(C B) for each of ``kinds`` through the symmetric matrix S = W^{1/2} V W^{1/2}."""
    C, B = (np.asarray(f, dtype=float) for f in factors)
    # C B = B^{-1/2} (B^{1/2} C B^{1/2}) B^{1/2};  C B = C^{1/2} (C^{1/2} B C^{1/2}) C^{-1/2}
    for W, V, left_inverse in ((B, C, True), (C, B, False)):
        w, U = np.linalg.eigh(symmetrize(W))
        if w[0] <= 0 or w[-1] / w[0] > max_cond:
            continue
        root = np.sqrt(w)
        half = (U * root) @ U.T
        half_inv = (U / root) @ U.T
        S = symmetrize(half @ V @ half)
        lam, E = np.linalg.eigh(S)
        if lam[0] < -rtol * max(float(np.max(np.abs(lam))), np.finfo(float).tiny):
            raise NegativeSpectrum(f"spectrum of X not non-negative (min {lam[0]:.3e})")
        if left_inverse:
            L, Rt = half_inv @ E, E.T @ half
        else:
            L, Rt = half @ E, E.T @ half_inv
        return tuple((L * _scalar_even(kind, lam, t)) @ Rt for kind in kinds)
    return None


def maclaurin_even_function(X, kind, t, tol=1e-16, max_terms=60):
    """Evaluate an even function of ``t sqrt(X)`` through its power series in ``X``.

    The argument is scaled by ``2**-k`` so that the series converges quickly,
    truncated once the tail bound drops below ``tol``, then restored with the
    doubling formulas ``cosh 2a = 2 cosh^2 a - 1`` and
    ``sinh(2a)/r = 2 cosh(a) sinh(a)/r``.
    """
    X = as_matrix(X, "X")
    n = X.shape[0]
    if kind not in EVEN_KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    I = np.eye(n)
    norm = float(np.linalg.norm(X, 1))
    k = 0
    tau = float(t)
    while tau * tau * norm > 0.25:
        tau *= 0.5
        k += 1
    Y = tau * tau * X
    ynorm = tau * tau * norm
    cosh_part = I.copy()
    sinhc_part = I.copy()  # sinh(r)/r series, multiplied by tau below
    power = I.copy()
    for j in range(1, max_terms + 1):
        power = power @ Y
        c_term = power / math.factorial(2 * j)
        s_term = power / math.factorial(2 * j + 1)
        cosh_part += c_term
        sinhc_part += s_term
        # geometric tail bound for the remaining terms
        ratio = ynorm / ((2 * j + 1) * (2 * j + 2))
        tail = ynorm ** (j + 1) / math.factorial(2 * j + 2) / max(1.0 - ratio, 1e-300)
        if not (np.all(np.isfinite(cosh_part)) and np.all(np.isfinite(sinhc_part))):
            raise SeriesDivergence("non-finite partial sum")
        if tail <= tol:
            break
    else:
        raise SeriesDivergence(f"series did not reach tolerance {tol} in {max_terms} terms")
    sinhc_part = tau * sinhc_part
    for _ in range(k):
        sinhc_part = 2.0 * cosh_part @ sinhc_part
        cosh_part = 2.0 * cosh_part @ cosh_part - I
    if not np.all(np.isfinite(cosh_part)):
        raise SeriesDivergence("overflow while undoing the argument scaling")
    if kind == "cosh":
        return cosh_part
    if kind == "sech":
        return np.linalg.inv(cosh_part)
    return np.linalg.solve(cosh_part, sinhc_part)


def even_sqrt_function(X, kind, t, factors=None, method="auto", rtol=PSD_RTOL, max_cond=1e6):
    """Return ``cosh(t sqrt X)``, its inverse, or ``tanh(t sqrt X) / sqrt X``.

    ``X`` is expected to be a product ``C @ B`` of PSD matrices, so only even
    powers of the square root appear and no matrix square root of ``X`` is
    formed. When ``factors=(C, B)`` is supplied and one factor is well
    conditioned, the function is evaluated on the symmetric similarity
    transform; otherwise the scaled power series is used.
    """
    return even_sqrt_functions(X, (kind,), t, factors, method, rtol, max_cond)[0]


def even_sqrt_functions(X, kinds, t, factors=None, method="auto", rtol=PSD_RTOL, max_cond=1e6):
    """Several kinds at once, sharing one decomposition (see ``even_sqrt_function``)."""
    X = as_matrix(X, "X")
    kinds = tuple(kinds)
    for kind in kinds:
        if kind not in EVEN_KINDS:
            raise ValueError(f"unknown kind {kind!r}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if not np.any(X):
        return tuple(np.eye(X.shape[0]) * (t if kind == "tanh_over_sqrt" else 1.0) for kind in kinds)
    if method in ("auto", "similarity") and factors is not None:
        # the similarity route checks the spectrum on the symmetric transform
        out = _similarity_route(factors, kinds, float(t), max_cond, rtol)
        if out is not None:
            return out
        if method == "similarity":
            raise ValueError("neither factor is well conditioned enough for the similarity route")
    elif method == "similarity":
        raise ValueError("similarity route needs factors=(C, B)")
    _check_spectrum(X, rtol)
    return tuple(maclaurin_even_function(X, kind, t) for kind in kinds)


def random_operator_set(n, seed, with_C=True, with_D=True, alpha=None, scale=1.0):
    """Seeded random generators of moderate norm, for property checks."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = scale * A @ A.T / n
    if with_C:
        A = rng.standard_normal((n, n))
        C = scale * A @ A.T / n
    else:
        C = np.zeros((n, n))
    D = 0.5 * scale * rng.standard_normal((n, n)) if with_D else np.zeros((n, n))
    a = float(rng.uniform(-0.5, 0.5)) if alpha is None else alpha
    return validate_operator_set(B, C, D, a)
