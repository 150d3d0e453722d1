"""Discretised conditional Ornstein-Uhlenbeck path measure.

Paths live on a :class:`TimeGrid`. A path starts at ``x`` and each step of
length ``dt`` moves ``y -> N(R(dt) y, Q(dt))`` while accumulating the log of
the kernel mass ``log s(dt) - 1/2 (P(dt) y, y)``. Cylinder events that only
constrain grid times are therefore sampled without discretisation bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import streams
from .errors import (
    AlphaNonzero,
    BridgeUnavailable,
    DegenerateStep,
    DimensionMismatch,
    EmptyAcceptance,
    LowAcceptance,
)
from .flow import evolve
from .kernel import SINGULAR_COND, GaussianMeasure
from .operators import symmetrize

MIN_ACCEPTANCE = 1e-4


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        if t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T, steps):
        return cls(np.linspace(0.0, float(T), int(steps) + 1))

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def steps(self):
        return np.diff(self.times)

    def index_of(self, t, rtol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > rtol * max(self.horizon, 1.0):
            raise ValueError(f"time {t} is not on the grid")
        return i

    def to_list(self):
        return self.times.tolist()


# ---------------------------------------------------------------------------
# sets

@dataclass(frozen=True, eq=False)
class WholeSpace:
    def contains(self, Y):
        return np.ones(np.atleast_2d(Y).shape[0], dtype=bool)

    def to_dict(self):
        return {"type": "whole"}


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).reshape(-1))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).reshape(-1))

    def contains(self, Y):
        Y = np.atleast_2d(Y)
        return np.all((Y >= self.lower) & (Y <= self.upper), axis=1)

    def to_dict(self):
        return {"type": "box", "lower": _floats(self.lower), "upper": _floats(self.upper)}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))

    def contains(self, Y):
        Y = np.atleast_2d(Y)
        return np.sum((Y - self.center) ** 2, axis=1) <= self.radius**2

    def to_dict(self):
        return {"type": "ball", "center": _floats(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Points with ``(normal, y) >= offset``."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).reshape(-1))

    def contains(self, Y):
        return np.atleast_2d(Y) @ self.normal >= self.offset

    def to_dict(self):
        return {"type": "halfspace", "normal": _floats(self.normal), "offset": self.offset}


def _floats(a):
    # JSON has no infinity; keep bounds as strings there
    return [v if math.isfinite(v) else ("inf" if v > 0 else "-inf") for v in map(float, a)]


def set_from_dict(d):
    kind = d.get("type", "box")
    if kind == "whole":
        return WholeSpace()
    if kind == "box":
        return Box(np.array(d["lower"], dtype=float), np.array(d["upper"], dtype=float))
    if kind == "ball":
        return Ball(np.array(d["center"], dtype=float), float(d["radius"]))
    if kind == "halfspace":
        return HalfSpace(np.array(d["normal"], dtype=float), float(d.get("offset", 0.0)))
    raise ValueError(f"unknown set type {kind!r}")


@dataclass(frozen=True, eq=False)
class CylinderSpec:
    """Constraints ``f(t_i) in A_i`` at interior grid times plus ``f(T) in terminal``."""

    constraints: tuple = ()
    terminal: object = field(default_factory=WholeSpace)

    def check(self, grid):
        for t, _ in self.constraints:
            if not 0.0 < t < grid.horizon:
                raise ValueError(f"constraint time {t} is not strictly inside (0, T)")
            grid.index_of(t)


# ---------------------------------------------------------------------------
# step kernels

@dataclass(frozen=True, eq=False)
class _Step:
    log_s: float
    P: np.ndarray
    R: np.ndarray
    L: np.ndarray  # Q = L L^T
    weighted: bool


def _step_kernel(ops, dt):
    st = evolve(ops, dt)
    Q = st.Q
    w = np.linalg.eigvalsh(Q) if np.any(Q) else np.zeros(1)
    if w[0] <= 0 or w[-1] / w[0] >= SINGULAR_COND:
        raise DegenerateStep(f"covariance over a step of {dt:.3g} is singular")
    L = np.linalg.cholesky(Q)
    return _Step(math.log(st.s), st.P, st.R, L, bool(np.any(st.P)) or st.s != 1.0)


def step_kernels(ops, grid):
    """Kernels for every grid step, computed once per distinct step length."""
    cache = {}
    out = []
    for dt in grid.steps:
        key = float(f"{dt:.12g}")
        if key not in cache:
            cache[key] = _step_kernel(ops, key)
        out.append(cache[key])
    return out


def iterate_block(kernels, y0, rng):
    """Yield ``(i, y, log_weight)`` for grid index ``i = 0..m`` of one block of paths."""
    y = np.array(y0, dtype=float)
    logw = np.zeros(y.shape[0])
    yield 0, y, logw
    n = y.shape[1]
    for i, k in enumerate(kernels, start=1):
        xi = rng.standard_normal((y.shape[0], n))
        if k.weighted:
            logw = logw + k.log_s - 0.5 * np.einsum("ki,ij,kj->k", y, k.P, y)
        y = y @ k.R.T + xi @ k.L.T
        yield i, y, logw


def _require_no_alpha(ops):
    if ops.alpha != 0.0:
        raise AlphaNonzero("the path measure is built from the alpha-free equation")


def _starts(x, N, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != n:
            raise DimensionMismatch("start point has wrong dimension")
        return np.broadcast_to(x, (N, n))
    if x.shape != (N, n):
        raise DimensionMismatch("per-path starts must have shape (N, n)")
    return x


# ---------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True, eq=False)
class PathSample:
    values: np.ndarray
    log_weight: float


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """``values[k, i]`` is sample ``k`` at grid time ``i``."""

    grid: TimeGrid
    x: np.ndarray
    values: np.ndarray
    log_weights: np.ndarray
    seed: int
    ops: object
    acceptance_rate: float | None = None

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    @property
    def samples(self):
        return [PathSample(v, float(w)) for v, w in zip(self.values, self.log_weights)]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def at(self, t):
        return self.values[:, self.grid.index_of(t)]


def sample_paths(ops, x, grid, N, seed, workers=1):
    """Draw ``N`` weighted paths of the chained-kernel measure started at ``x``."""
    _require_no_alpha(ops)
    if N < 1:
        raise ValueError("N must be at least 1")
    n = ops.dim
    starts = _starts(x, N, n)
    kernels = step_kernels(ops, grid)
    m = len(kernels)

    def run(b, sl):
        rng = streams.block_generator(seed, streams.PATHS, b)
        vals = np.empty((sl.stop - sl.start, m + 1, n))
        logw = None
        for i, y, logw in iterate_block(kernels, starts[sl], rng):
            vals[:, i] = y
        return vals, logw

    parts = streams.map_blocks(run, N, workers)
    values = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    return PathEnsemble(grid, np.asarray(x, dtype=float), values, logw, int(seed), ops)


@dataclass
class CylinderResult:
    estimate: float
    stderr: float
    n_effective: float

    def to_dict(self):
        return {"estimate": self.estimate, "stderr": self.stderr, "n_effective": self.n_effective}


def cylinder_mass(ensemble, spec):
    """Monte Carlo mass of a cylinder set under the (weighted) path measure."""
    spec.check(ensemble.grid)
    ind = spec.terminal.contains(ensemble.values[:, -1])
    for t, A in spec.constraints:
        ind &= A.contains(ensemble.at(t))
    if not np.any(ind):
        raise EmptyAcceptance("no sampled path satisfies the cylinder constraints")
    contrib = np.where(ind, ensemble.weights, 0.0)
    N = contrib.shape[0]
    est = float(np.mean(contrib))
    se = float(np.std(contrib, ddof=1) / math.sqrt(N)) if N > 1 else math.nan
    ess = float(contrib.sum() ** 2 / np.sum(contrib**2))
    return CylinderResult(est, se, ess)


# ---------------------------------------------------------------------------
# endpoint conditioning

def path_law(ops, x, grid):
    """Joint Gaussian law of the path values at grid times ``t_1..t_m`` (requires C = 0)."""
    if not ops.c_is_zero:
        raise BridgeUnavailable("exact bridges need C == 0 (the path measure is then Gaussian)")
    kernels = [evolve(ops, dt) for dt in grid.steps]
    n = ops.dim
    m = len(kernels)
    mean = np.empty((m, n))
    cov = np.zeros((m * n, m * n))
    prev_mean = np.asarray(x, dtype=float)
    prev_var = np.zeros((n, n))
    for i, k in enumerate(kernels):
        mean[i] = k.R @ prev_mean
        var = symmetrize(k.R @ prev_var @ k.R.T + k.Q)
        cov[i * n:(i + 1) * n, i * n:(i + 1) * n] = var
        # Cov(y_i, y_j) = R_i Cov(y_{i-1}, y_j) for j < i
        for j in range(i):
            blk = k.R @ cov[(i - 1) * n:i * n, j * n:(j + 1) * n]
            cov[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
            cov[j * n:(j + 1) * n, i * n:(i + 1) * n] = blk.T
        prev_mean, prev_var = mean[i], var
    return mean.reshape(-1), cov


def _psd_root(a):
    w, U = np.linalg.eigh(symmetrize(a))
    return U * np.sqrt(np.clip(w, 0.0, None))


def condition_endpoint(ops, x, grid, N, seed, terminal, workers=1, max_batches=None):
    """Paths pinned at the end of the grid.

    ``terminal`` may be a point (exact bridge), a :class:`GaussianMeasure`
    (endpoint drawn from it, interior from the exact bridge) or a set, in
    which case plain paths are filtered by rejection and the acceptance
    rate is recorded on the returned ensemble.
    """
    _require_no_alpha(ops)
    n = ops.dim
    if isinstance(terminal, (WholeSpace, Box, Ball, HalfSpace)):
        return _reject(ops, x, grid, N, seed, terminal, workers, max_batches)
    mean, cov = path_law(ops, x, grid)
    m = grid.steps.shape[0]
    k = (m - 1) * n
    S_it, S_tt = cov[:k, k:], cov[k:, k:]
    gain = np.linalg.solve(S_tt, S_it.T).T
    root = _psd_root(cov[:k, :k] - gain @ S_it.T)
    if isinstance(terminal, GaussianMeasure):
        end_mean, end_root = terminal.mean, _psd_root(terminal.cov)
    else:
        end_mean = np.asarray(terminal, dtype=float).reshape(-1)
        if end_mean.shape[0] != n:
            raise DimensionMismatch("terminal point has wrong dimension")
        end_root = np.zeros((n, n))

    def run(b, sl):
        rng = streams.block_generator(seed, streams.BRIDGE, b)
        size = sl.stop - sl.start
        end = end_mean + rng.standard_normal((size, n)) @ end_root.T
        inner = mean[:k] + (end - mean[k:]) @ gain.T + rng.standard_normal((size, k)) @ root.T
        return np.concatenate([inner, end], axis=1)

    flat = np.concatenate(streams.map_blocks(run, N, workers))
    values = np.empty((N, m + 1, n))
    values[:, 0] = x
    values[:, 1:] = flat.reshape(N, m, n)
    return PathEnsemble(grid, np.asarray(x, dtype=float), values, np.zeros(N), int(seed), ops)


def _reject(ops, x, grid, N, seed, A, workers, max_batches):
    kept_v, kept_w = [], []
    tried = accepted = 0
    max_batches = max_batches or int(math.ceil(1.0 / MIN_ACCEPTANCE))
    for batch in range(max_batches):
        ens = _sample_batch(ops, x, grid, N, seed, batch, workers)
        ok = A.contains(ens.values[:, -1])
        tried += N
        accepted += int(ok.sum())
        kept_v.append(ens.values[ok])
        kept_w.append(ens.log_weights[ok])
        rate = accepted / tried
        if rate < MIN_ACCEPTANCE:
            raise LowAcceptance(f"acceptance rate {rate:.2e} below {MIN_ACCEPTANCE:g}")
        if accepted >= N:
            break
    else:
        raise LowAcceptance(f"only {accepted} of {N} paths accepted after {tried} tries")
    values = np.concatenate(kept_v)[:N]
    logw = np.concatenate(kept_w)[:N]
    return PathEnsemble(grid, np.asarray(x, dtype=float), values, logw, int(seed), ops,
                        acceptance_rate=accepted / tried)


def _sample_batch(ops, x, grid, N, seed, batch, workers):
    # rejection batches get their own key space so batch 0 is not the plain ensemble
    derived = int(np.random.SeedSequence([int(seed), streams.REJECTION, batch]).generate_state(1)[0])
    return sample_paths(ops, x, grid, N, derived, workers)


# ---------------------------------------------------------------------------
# statistical checks

@dataclass
class FunctionalCheck:
    label: str
    max_deviation: float
    threshold: float
    passed: bool


@dataclass
class GaussianityReport:
    checks: list
    passed: bool | None
    insufficient: bool = False
    weighted: bool = False
    note: str = ""

    def to_dict(self):
        return {
            "passed": self.passed,
            "insufficient": self.insufficient,
            "weighted": self.weighted,
            "note": self.note,
            "checks": [c.__dict__ for c in self.checks],
        }


def _cf_check(z, label, freqs):
    mu = float(np.mean(z))
    sd = float(np.std(z))
    if sd == 0.0:
        return FunctionalCheck(label, 0.0, 0.0, True)
    N = z.shape[0]
    worst_ratio, worst_dev, worst_thr = -1.0, 0.0, 0.0
    for k in freqs:
        w = k / sd
        c, s = np.cos(w * z), np.sin(w * z)
        emp = complex(c.mean(), s.mean())
        fit = np.exp(1j * w * mu - 0.5 * (w * sd) ** 2)
        dev = abs(emp - fit)
        thr = 3.0 * math.sqrt((c.var() + s.var()) / N)
        if dev / thr > worst_ratio:
            worst_ratio, worst_dev, worst_thr = dev / thr, dev, thr
    return FunctionalCheck(label, worst_dev, worst_thr, worst_dev <= worst_thr)


def gaussianity_check(ensemble, functionals, freqs=(0.5, 1.0, 1.5, 2.0), min_samples=100,
                      values=None):
    """Compare empirical characteristic functions of linear functionals with Gaussian fits.

    Each functional is ``(t, v)`` meaning ``<f(t), v>``. Pairs are also tested
    through their standardised sum and difference. ``values`` overrides the
    ensemble's path values (used for negative controls).
    """
    vals = ensemble.values if values is None else values
    N = vals.shape[0]
    if N < min_samples:
        return GaussianityReport([], None, insufficient=True,
                                 note=f"{N} samples; at least {min_samples} needed")
    weighted = bool(np.any(ensemble.log_weights != 0))
    zs = []
    for t, v in functionals:
        zs.append((f"t={t:g},v={np.round(np.asarray(v, dtype=float), 6).tolist()}",
                   vals[:, ensemble.grid.index_of(t)] @ np.asarray(v, dtype=float)))
    checks = [_cf_check(z, label, freqs) for label, z in zs]
    std = [(label, (z - z.mean()) / (z.std() or 1.0)) for label, z in zs]
    for a in range(len(std)):
        for b in range(a + 1, len(std)):
            la, za = std[a]
            lb, zb = std[b]
            checks.append(_cf_check(za + zb, f"({la})+({lb})", freqs))
            checks.append(_cf_check(za - zb, f"({la})-({lb})", freqs))
    if weighted:
        return GaussianityReport(checks, None, weighted=True,
                                 note="weighted ensemble: Gaussianity reported, not asserted")
    return GaussianityReport(checks, all(c.passed for c in checks))


def energy_two_sample(a, b, n_perm=200, seed=0):
    """Energy-distance two-sample statistic with a permutation p-value."""
    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    pooled = np.vstack([a, b])
    D = cdist(pooled, pooled)
    na = a.shape[0]
    labels = np.zeros(pooled.shape[0], dtype=bool)
    labels[:na] = True

    def stat(mask):
        ia, ib = np.flatnonzero(mask), np.flatnonzero(~mask)
        return (2 * D[np.ix_(ia, ib)].mean() - D[np.ix_(ia, ia)].mean() - D[np.ix_(ib, ib)].mean())

    observed = stat(labels)
    rng = np.random.default_rng(seed)
    count = sum(stat(rng.permutation(labels)) >= observed for _ in range(n_perm))
    return float(observed), (count + 1) / (n_perm + 1)
