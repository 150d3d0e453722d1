"""Path-integral Monte Carlo for the measure equation with a potential ``V(t, x)``.

The weak fundamental solution is estimated as the average of
``exp(int_0^t V(s, q(s)) ds) * 1[q(t) in A]`` over paths ``q`` of the
``C = 0`` base measure; the time integral uses quadrature on the path grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import (
    AlphaNonzero,
    CNotZero,
    DimensionMismatch,
    EmptyAcceptance,
    MomentConditionViolated,
    WeightOverflow,
)
from .kernel import GaussianMeasure, PointMixture
from .paths import TimeGrid, WholeSpace, iterate_block, step_kernels

LOG_OVERFLOW = 700.0
MOMENT_MARGIN = 0.1


@dataclass(frozen=True)
class GrowthBound:
    """Declared envelopes ``|V| <= C1(t) exp(rate |x|)`` and ``Re V <= C2(t) (1 + |x|^r)``.

    ``c1`` and ``c2`` are numbers or callables of ``t``.
    """

    c1: object = 1.0
    c2: object = 1.0
    r: float = 2.0
    rate: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.r <= 2.0:
            raise ValueError("growth exponent r must lie in [0, 2]")

    def C1(self, t):
        return self.c1(t) if callable(self.c1) else float(self.c1)

    def C2(self, t):
        return self.c2(t) if callable(self.c2) else float(self.c2)


@dataclass(frozen=True, eq=False)
class Potential:
    """Scalar field ``V(t, x)``; call as ``V(t, X)`` with ``X`` of shape ``(k, n)``."""

    kind: str
    params: dict
    growth: GrowthBound = field(default_factory=GrowthBound)
    fn: object = None

    @classmethod
    def quadratic(cls, C_v, c0=0.0, growth=None):
        """``V = -1/2 (C_v x, x) + c0``."""
        C_v = np.atleast_2d(np.asarray(C_v, dtype=float))
        if growth is None:
            bound = 0.5 * float(np.linalg.norm(C_v, 2)) + abs(c0)
            growth = GrowthBound(c1=max(bound, 1e-300), c2=max(c0, 0.0), r=2.0)
        return cls("quadratic", {"C_v": C_v, "c0": float(c0)}, growth)

    @classmethod
    def bounded_cosine(cls, v0, k, growth=None):
        """``V = v0 cos((k, x))``."""
        k = np.asarray(k, dtype=float).reshape(-1)
        if growth is None:
            growth = GrowthBound(c1=abs(v0), c2=abs(v0), r=0.0)
        return cls("bounded_cosine", {"v0": float(v0), "k": k}, growth)

    @classmethod
    def constant(cls, c):
        return cls("constant", {"c": float(c)}, GrowthBound(c1=abs(c), c2=abs(c), r=0.0))

    @classmethod
    def tabulated(cls, fn, growth=None, name="tabulated", dim=1):
        return cls("tabulated", {"name": name, "dim": int(dim)}, growth or GrowthBound(), fn)

    def __call__(self, t, X):
        X = np.atleast_2d(X)
        if self.kind == "quadratic":
            C_v = self.params["C_v"]
            return -0.5 * np.einsum("ki,ij,kj->k", X, C_v, X) + self.params["c0"]
        if self.kind == "bounded_cosine":
            return self.params["v0"] * np.cos(X @ self.params["k"])
        if self.kind == "constant":
            return np.full(X.shape[0], self.params["c"])
        return np.asarray(self.fn(t, X))

    def to_dict(self):
        out = {"kind": self.kind, "r": self.growth.r}
        for k, v in self.params.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class PotentialReport:
    n_probes: int
    refuted_c1: int
    refuted_c2: int
    worst: dict
    passed: bool
    note: str = (
        "growth hypotheses are asymptotic; finite probes can refute them but never confirm them"
    )

    def to_dict(self):
        return dict(self.__dict__)


def validate_potential(V, probes=1000, seed=0, radius=10.0, t_max=1.0):
    """Probe the declared growth envelopes of ``V`` at random ``(t, x)``.

    Report-only: failures are listed, nothing is raised.
    """
    dim = _potential_dim(V)
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, t_max, probes)
    dirs = rng.standard_normal((probes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # half the probes on the outer sphere, where growth violations show first
    radii = np.where(np.arange(probes) % 2 == 0, radius, radius * rng.uniform(0, 1, probes))
    X = dirs * radii[:, None]
    g = V.growth
    bad1 = bad2 = 0
    worst = {"ratio": 0.0}
    with np.errstate(over="ignore", invalid="ignore"):
        for t, x in zip(ts, X):
            v = complex(np.asarray(V(t, x[None, :])).reshape(-1)[0])
            nx = float(np.linalg.norm(x))
            env1 = g.C1(t) * math.exp(g.rate * nx)
            env2 = g.C2(t) * (1.0 + nx**g.r)
            r1 = abs(v) / env1 if env1 > 0 else (math.inf if abs(v) > 0 else 0.0)
            ok1 = math.isfinite(abs(v)) and abs(v) <= env1 * (1 + 1e-12)
            ok2 = math.isfinite(v.real) and v.real <= env2 + 1e-12 * abs(env2)
            bad1 += not ok1
            bad2 += not ok2
            if not (r1 <= worst["ratio"]):
                worst = {"ratio": r1, "t": float(t), "x_norm": nx}
    return PotentialReport(probes, bad1, bad2, worst, bad1 == 0 and bad2 == 0)


def _potential_dim(V):
    if V.kind == "quadratic":
        return V.params["C_v"].shape[0]
    if V.kind == "bounded_cosine":
        return V.params["k"].shape[0]
    return int(V.params.get("dim", 1))


def quadrature_weights(grid, rule="trapezoid"):
    h = grid.steps
    if rule == "trapezoid":
        w = np.zeros(h.shape[0] + 1)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w
    if rule == "simpson":
        m = h.shape[0]
        if m % 2 or np.max(np.abs(h - h[0])) > 1e-12 * h[0]:
            raise ValueError("Simpson's rule needs a uniform grid with an even number of steps")
        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * h[0] / 3.0
    raise ValueError(f"unknown quadrature rule {rule!r}")


def path_integral_weight(path, V, grid, rule="trapezoid"):
    """``exp`` of the quadrature of ``s -> V(s, q(s))`` along one path."""
    values = np.asarray(getattr(path, "values", path), dtype=float)
    values = values.reshape(len(grid.times), -1)
    w = quadrature_weights(grid, rule)
    log_w = sum(wi * V(t, y[None, :])[0] for wi, t, y in zip(w, grid.times, values))
    if np.real(log_w) > LOG_OVERFLOW:
        raise WeightOverflow(f"log-weight {np.real(log_w):.1f} exceeds {LOG_OVERFLOW}", 1.0)
    return np.exp(log_w)


@dataclass
class FKEstimate:
    value: complex | float
    stderr: float
    N: int
    grid: TimeGrid
    seed: int = 0
    overflow_fraction: float = 0.0
    label: str = ""

    def to_dict(self):
        v = self.value
        val = {"re": v.real, "im": v.imag} if isinstance(v, complex) else v
        return {
            "estimate": val,
            "stderr": self.stderr,
            "N": self.N,
            "grid": {"T": self.grid.horizon, "steps": int(self.grid.steps.shape[0])},
            "seed": self.seed,
            "overflow_fraction": self.overflow_fraction,
            "label": self.label,
        }


def _check_base(ops, experimental):
    if ops.alpha != 0.0:
        raise AlphaNonzero("the base path measure is built without alpha")
    if not ops.c_is_zero and not experimental:
        raise CNotZero("base measure needs C == 0 (pass experimental_weighted_base=True to override)")


def _fk_terminal_values(ops, V, starts, grid, N, seed, workers, rule):
    """Per-path ``(log_weight, terminal value)`` for paths from ``starts``."""
    kernels = step_kernels(ops, grid)
    qw = quadrature_weights(grid, rule)
    times = grid.times

    def run(b, sl):
        rng = streams.block_generator(seed, streams.PATHS, b)
        acc = None
        y_end = None
        for i, y, logw in iterate_block(kernels, starts[sl], rng):
            contrib = qw[i] * V(times[i], y)
            acc = contrib if acc is None else acc + contrib
            y_end = y
        return acc + logw, y_end

    parts = streams.map_blocks(run, N, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _summarise(contrib, grid, seed, overflow, label=""):
    N = contrib.shape[0]
    if np.iscomplexobj(contrib):
        est = complex(np.mean(contrib))
        var = np.var(contrib.real, ddof=1) + np.var(contrib.imag, ddof=1)
    else:
        est = float(np.mean(contrib))
        var = np.var(contrib, ddof=1)
    return FKEstimate(est, float(math.sqrt(var / N)), N, grid, int(seed), overflow, label)


def _weights(log_w):
    over = np.real(log_w) > LOG_OVERFLOW
    frac = float(np.mean(over))
    if frac > 0:
        raise WeightOverflow(f"{frac:.2%} of path weights overflow", frac)
    return np.exp(log_w), frac


def fk_kernel_mass(ops, V, x, t, A=None, N=100_000, grid=None, seed=0, workers=1,
                   rule="trapezoid", experimental_weighted_base=False):
    """Estimate ``[G^V_x(t)](A)`` by averaging path weights over the base measure."""
    _check_base(ops, experimental_weighted_base)
    grid = grid or TimeGrid.uniform(t, 1000)
    if abs(grid.horizon - t) > 1e-12 * max(t, 1.0):
        raise ValueError("grid horizon must equal t")
    if N < 100:
        raise ValueError("N must be at least 100")
    A = A or WholeSpace()
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != ops.dim:
        raise DimensionMismatch("start point has wrong dimension")
    starts = np.broadcast_to(x, (N, ops.dim))
    log_w, y_end = _fk_terminal_values(ops, V, starts, grid, N, seed, workers, rule)
    w, frac = _weights(log_w)
    ind = A.contains(y_end)
    if not np.any(ind):
        raise EmptyAcceptance("no path ends in the terminal set")
    return _summarise(np.where(ind, w, 0.0), grid, seed, frac)


# ---------------------------------------------------------------------------
# evolution of an initial measure

@dataclass(frozen=True)
class Indicator:
    region: object

    def __call__(self, Y):
        return self.region.contains(Y).astype(float)

    @property
    def label(self):
        return f"indicator:{self.region.to_dict()}"


@dataclass(frozen=True, eq=False)
class FourierMode:
    """``cos((y, x))`` or ``sin((y, x))``."""

    y: np.ndarray
    part: str = "re"

    def __call__(self, Y):
        phase = np.atleast_2d(Y) @ np.asarray(self.y, dtype=float)
        return np.cos(phase) if self.part == "re" else np.sin(phase)

    @property
    def label(self):
        return f"fourier_{self.part}:{np.asarray(self.y).tolist()}"


@dataclass(frozen=True)
class Constant:
    def __call__(self, Y):
        return np.ones(np.atleast_2d(Y).shape[0])

    label = "one"


def check_moment_condition(nu0, r, margin=MOMENT_MARGIN):
    """Raise unless ``int exp(|x|^r) nu0(dx)`` is finite with margin.

    For a Gaussian and ``r = 2`` this needs the largest covariance eigenvalue
    below ``1/2``; the margin shrinks the admissible value to ``(1 - margin)/2``.
    """
    if isinstance(nu0, GaussianMeasure) and r >= 2.0:
        lam = float(np.linalg.eigvalsh(nu0.cov)[-1]) if nu0.cov.size else 0.0
        if lam >= 0.5 * (1.0 - margin):
            raise MomentConditionViolated(
                f"covariance eigenvalue {lam:.3g} too large for exp(|x|^2) integrability"
            )


def _sample_initial(nu0, N, seed):
    rng = streams.block_generator(seed, streams.INITIAL, 0)
    if isinstance(nu0, GaussianMeasure):
        return nu0.sample(rng, N), nu0.mass
    if isinstance(nu0, PointMixture):
        idx = rng.choice(len(nu0.weights), size=N, p=nu0.weights / nu0.weights.sum())
        return nu0.points[idx], nu0.mass
    raise TypeError(f"unsupported initial measure {type(nu0).__name__}")


def fk_evolve(ops, V, nu0, t, test_functions, N=100_000, grid=None, seed=0, workers=1,
              rule="trapezoid", experimental_weighted_base=False):
    """Estimate ``int f d nu(t)`` for each test function, ``nu(t) = int G^V_x(t) nu0(dx)``."""
    _check_base(ops, experimental_weighted_base)
    check_moment_condition(nu0, V.growth.r)
    grid = grid or TimeGrid.uniform(t, 1000)
    if abs(grid.horizon - t) > 1e-12 * max(t, 1.0):
        raise ValueError("grid horizon must equal t")
    if nu0.dim != ops.dim:
        raise DimensionMismatch("initial measure has wrong dimension")
    starts, mass = _sample_initial(nu0, N, seed)
    log_w, y_end = _fk_terminal_values(ops, V, starts, grid, N, seed, workers, rule)
    w, frac = _weights(log_w)
    out = []
    for f in test_functions:
        est = _summarise(mass * w * f(y_end), grid, seed, frac, getattr(f, "label", ""))
        out.append(est)
    return out
