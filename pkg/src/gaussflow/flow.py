"""Riccati flow of the kernel parameters ``(s, P, Q, R)``.

The parameters of the fundamental solution obey

    s' = -1/2 s tr(C Q) + alpha s          s(0) = 1
    P' = R^T C R                            P(0) = 0
    Q' = B - Q C Q + D^T Q + Q D            Q(0) = 0
    R' = -Q C R + D^T R                     R(0) = I

Fourier-domain form of the measure equation
-------------------------------------------
With ``G(y) = int exp(i(z, y)) G_x(t)(dz)`` the equation becomes

    dG/dt = -1/2 (B y, y) G + (grad_y G, D y) + 1/2 tr(C Hess_y G) + alpha G.

The diffusion term is the defining relation of ``tr(B mu'')``, the drift term
is minus the directional derivative along ``D y`` (and enters with a minus
sign in the equation), and multiplying a measure by ``(C z, z)`` turns into
``-tr(C Hess)`` of its transform. Substituting
``log G = log s - 1/2 x'Px + i x'R'y - 1/2 y'Qy`` and matching the constant,
``xx``, ``xy`` and ``yy`` terms reproduces the system above exactly, which is
what :func:`pde_residual_fourier` checks.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CNotZero, DNotZero, NoisyFlow, NotPSD, PSDLost, StepFailure
from .kernel import GaussianKernel, apply_to_initial
from .operators import (
    PSD_RTOL,
    OperatorSet,
    check_psd,
    conjugated_integral,
    even_sqrt_functions,
    matrix_exponential,
    symmetrize,
    validate_operator_set,
)

SYMMETRY_DRIFT_RTOL = 1e-10
DEFAULT_STEP_FRACTION = 1e-3
RICHARDSON_CONTRACTION = 0.25


@dataclass(frozen=True, eq=False)
class EvolutionState:
    t: float
    s: float
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "s", float(self.s))
        for name in ("P", "Q", "R"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def initial(cls, n):
        return cls(0.0, 1.0, np.zeros((n, n)), np.zeros((n, n)), np.eye(n))

    @classmethod
    def from_kernel(cls, t, kernel):
        return cls(float(t), kernel.s, kernel.P, kernel.Q, kernel.R)

    @property
    def dim(self):
        return self.R.shape[0]

    @property
    def kernel(self):
        return GaussianKernel(self.s, self.P, self.Q, self.R)

    def params(self):
        return {"s": np.array([self.s]), "P": self.P, "Q": self.Q, "R": self.R}


class Derivative(NamedTuple):
    ds: float
    dP: np.ndarray
    dQ: np.ndarray
    dR: np.ndarray


def _rhs(s, P, Q, R, ops):
    B, C, D = ops.B, ops.C, ops.D
    CQ = C @ Q
    ds = s * (-0.5 * np.trace(CQ) + ops.alpha)
    dP = symmetrize(R.T @ C @ R)
    dQ = symmetrize(B - Q @ CQ + D.T @ Q + Q @ D)
    dR = -Q @ (C @ R) + D.T @ R
    return ds, dP, dQ, dR


def rhs(state, ops):
    """Time derivative of the kernel parameters at ``state``."""
    return Derivative(*_rhs(state.s, state.P, state.Q, state.R, ops))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: tuple
    ops: OperatorSet
    error_estimate: float | None = field(default=None)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.states)

    @property
    def final(self):
        return self.states[-1]

    def to_rows(self):
        n = self.ops.dim
        header = ["t", "s"]
        for name in ("P", "Q", "R"):
            header += [f"{name}_{i}_{j}" for i in range(n) for j in range(n)]
        rows = []
        for st in self.states:
            rows.append([st.t, st.s, *st.P.ravel(), *st.Q.ravel(), *st.R.ravel()])
        return header, rows

    def to_csv(self):
        header, rows = self.to_rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(
            {
                "dim": self.ops.dim,
                "states": [
                    {"t": st.t, "s": st.s, "P": st.P.tolist(), "Q": st.Q.tolist(), "R": st.R.tolist()}
                    for st in self.states
                ],
            }
        )


def _check_step(P, Q, psd_rtol, t):
    for name, a in (("P", P), ("Q", Q)):
        scale = float(np.max(np.abs(a)))
        if scale and float(np.max(np.abs(a - a.T))) > SYMMETRY_DRIFT_RTOL * scale:
            raise PSDLost(f"{name} drifted from symmetry at t={t:.6g}")
    for name, a in (("P", P), ("Q", Q)):
        if np.any(a):
            w = np.linalg.eigvalsh(a)
            if w[0] < -psd_rtol * max(abs(w[0]), abs(w[-1])):
                raise PSDLost(f"{name} lost positive semidefiniteness at t={t:.6g}")


def _rk4(ops, T, n_steps, save_every, psd_rtol):
    n = ops.dim
    h = T / n_steps
    s, P, Q, R = 1.0, np.zeros((n, n)), np.zeros((n, n)), np.eye(n)
    states = [EvolutionState.initial(n)]
    times = [0.0]
    for k in range(1, n_steps + 1):
        k1 = _rhs(s, P, Q, R, ops)
        k2 = _rhs(*(a + 0.5 * h * d for a, d in zip((s, P, Q, R), k1)), ops)
        k3 = _rhs(*(a + 0.5 * h * d for a, d in zip((s, P, Q, R), k2)), ops)
        k4 = _rhs(*(a + h * d for a, d in zip((s, P, Q, R), k3)), ops)
        s, P, Q, R = (
            a + (h / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
            for a, d1, d2, d3, d4 in zip((s, P, Q, R), k1, k2, k3, k4)
        )
        if not (math.isfinite(s) and np.all(np.isfinite(Q)) and np.all(np.isfinite(R))):
            raise StepFailure(f"non-finite state at step {k}")
        t = T if k == n_steps else k * h
        _check_step(P, Q, psd_rtol, t)
        P, Q = symmetrize(P), symmetrize(Q)
        if k % save_every == 0 or k == n_steps:
            states.append(EvolutionState(t, float(s), P, Q, R))
            times.append(t)
    return np.array(times), states


def _adaptive(ops, T, n_out, rtol, psd_rtol):
    n = ops.dim
    nn = n * n

    def unpack(z):
        return z[0], z[1 : 1 + nn].reshape(n, n), z[1 + nn : 1 + 2 * nn].reshape(n, n), z[1 + 2 * nn :].reshape(n, n)

    def f(_, z):
        d = _rhs(*unpack(z), ops)
        return np.concatenate([[d[0]], d[1].ravel(), d[2].ravel(), d[3].ravel()])

    z0 = np.concatenate([[1.0], np.zeros(2 * nn), np.eye(n).ravel()])
    t_eval = np.linspace(0.0, T, n_out + 1)
    sol = solve_ivp(f, (0.0, T), z0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=rtol * 1e-3)
    if not sol.success:
        raise StepFailure(sol.message)
    states = []
    for t, z in zip(sol.t, sol.y.T):
        s, P, Q, R = unpack(z)
        _check_step(P, Q, psd_rtol, t)
        states.append(EvolutionState(float(t), float(s), symmetrize(P), symmetrize(Q), R.copy()))
    return sol.t, states


def state_distance(a, b):
    """Largest relative (Frobenius) parameter difference between two states."""
    worst = 0.0
    for (_, x), (_, y) in zip(a.params().items(), b.params().items()):
        ref = np.linalg.norm(y)
        diff = np.linalg.norm(x - y)
        worst = max(worst, diff / ref if ref > 0 else diff)
    return worst


def integrate(ops, T, n_steps=None, method="rk4", rtol=1e-9, save_every=1,
              check_error=False, psd_rtol=PSD_RTOL):
    """Integrate the parameter system from the exact initial state to ``T``.

    ``method="rk4"`` takes ``n_steps`` classical fourth-order steps (default
    ``1/DEFAULT_STEP_FRACTION``); ``method="adaptive"`` uses an embedded
    8(5,3) pair at ``rtol`` and reports ``n_steps`` equally spaced states.
    With ``check_error`` the fixed-step result is compared with a run at half
    the step and :class:`StepFailure` is raised if they differ by more than
    ``rtol``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if n_steps is None:
        n_steps = int(round(1.0 / DEFAULT_STEP_FRACTION))
    if method == "rk4":
        times, states = _rk4(ops, float(T), int(n_steps), int(save_every), psd_rtol)
    elif method == "adaptive":
        times, states = _adaptive(ops, float(T), int(n_steps), rtol, psd_rtol)
    else:
        raise ValueError(f"unknown method {method!r}")
    err = None
    if check_error and method == "rk4":
        _, fine = _rk4(ops, float(T), 2 * int(n_steps), 2 * int(n_steps), psd_rtol)
        # the half-step run is ~16x more accurate, so the difference estimates the error
        err = state_distance(states[-1], fine[-1])
        if err > rtol:
            raise StepFailure(f"step-halving error {err:.3e} exceeds rtol {rtol:.1e}")
    return Trajectory(np.asarray(times, dtype=float), tuple(states), ops, err)


def closed_form_C0(ops, t):
    """Exact parameters when ``C = 0``: pure drift-diffusion."""
    if not ops.c_is_zero:
        raise CNotZero("closed_form_C0 needs C == 0")
    t = float(t)
    n = ops.dim
    return EvolutionState(
        t,
        math.exp(ops.alpha * t),
        np.zeros((n, n)),
        conjugated_integral(ops.B, ops.D, t),
        matrix_exponential(ops.D.T, t),
    )


def closed_form_D0(ops, t):
    """Exact parameters when ``D = 0`` (operator Mehler formulas).

    With ``g = tanh(t sqrt(CB)) / sqrt(CB)`` and ``h = cosh(t sqrt(CB))``:
    ``P = g C``, ``Q = B g`` and ``R = (h^{-1})^T``. These orderings are the
    ones compatible with the Riccati system; they coincide with any other
    ordering when ``B`` and ``C`` commute.
    """
    if not ops.d_is_zero:
        raise DNotZero("closed_form_D0 needs D == 0")
    t = float(t)
    B, C = ops.B, ops.C
    X = C @ B
    g, h_inv = even_sqrt_functions(X, ("tanh_over_sqrt", "sech"), t, factors=(C, B))
    sign, logdet = np.linalg.slogdet(h_inv)
    if sign <= 0:
        raise NotPSD("cosh(t sqrt(CB)) has non-positive determinant")
    s = math.exp(ops.alpha * t + 0.5 * logdet)
    P = check_psd(symmetrize(g @ C), "P")
    Q = check_psd(symmetrize(B @ g), "Q")
    R = h_inv.T
    return EvolutionState(t, s, P, Q, R)


def evolve(ops, t, **integrate_kw):
    """Parameters at time ``t`` by the best available route (closed form if possible)."""
    if t == 0:
        return EvolutionState.initial(ops.dim)
    if ops.c_is_zero:
        return closed_form_C0(ops, t)
    if ops.d_is_zero:
        return closed_form_D0(ops, t)
    return integrate(ops, t, save_every=10**9, **integrate_kw).final


# ---------------------------------------------------------------------------
# Fourier-domain residual

def _residual_terms(state, ops, X, Y, deriv):
    """Vectorised residual and |G| for probe rows ``X[k], Y[k]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    P, Q, R = state.P, state.Q, state.R
    ds, dP, dQ, dR = deriv
    RX = X @ R.T
    logG = (np.log(state.s) - 0.5 * np.einsum("ki,ij,kj->k", X, P, X)
            + 1j * np.einsum("ki,ki->k", RX, Y) - 0.5 * np.einsum("ki,ij,kj->k", Y, Q, Y))
    G = np.exp(logG)
    dlog_dt = (ds / state.s - 0.5 * np.einsum("ki,ij,kj->k", X, dP, X)
               + 1j * np.einsum("ki,ki->k", X @ dR.T, Y) - 0.5 * np.einsum("ki,ij,kj->k", Y, dQ, Y))
    g = 1j * RX - Y @ Q  # gradient of log G in y (Q symmetric)
    diffusion = -0.5 * np.einsum("ki,ij,kj->k", Y, ops.B, Y)
    drift = np.einsum("ki,ki->k", g, Y @ ops.D.T)
    # tr(C (g g^T - Q)) = g^T C g - tr(CQ)
    potential = 0.5 * (np.einsum("ki,ij,kj->k", g, ops.C, g) - np.trace(ops.C @ Q))
    res = G * (dlog_dt - (diffusion + drift + potential + ops.alpha))
    return res, np.abs(G)


def pde_residual_fourier(state, ops, x, y, derivative=None):
    """Residual of the Fourier-transformed equation at ``(x, y)``.

    ``derivative`` supplies the time derivative of the parameters; by
    default it is :func:`rhs` at ``state``. Passing the derivative of a
    neighbouring or unperturbed state turns this into a test of whether
    ``state`` lies on the flow.
    """
    deriv = rhs(state, ops) if derivative is None else derivative
    res, _ = _residual_terms(state, ops, x, y, deriv)
    return complex(res[0])


def trajectory_derivatives(traj):
    """Five-point finite-difference time derivatives at interior states.

    Needs a uniform grid; returns ``(indices, derivatives)``.
    """
    t = traj.times
    h = np.diff(t)
    if len(t) < 5 or np.max(np.abs(h - h[0])) > 1e-9 * h[0]:
        raise ValueError("finite-difference derivatives need >= 5 uniformly spaced states")
    h = h[0]
    idx = list(range(2, len(t) - 2))
    out = []
    st = traj.states
    for i in idx:
        comps = []
        for name in ("s", "P", "Q", "R"):
            f = [getattr(st[i + k], name) for k in (-2, -1, 1, 2)]
            comps.append((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h))
        out.append(Derivative(float(comps[0]), *comps[1:]))
    return idx, out


@dataclass
class ResidualReport:
    t: list
    max_abs_residual: list
    max_normalized: float
    probe_points: list

    def to_dict(self):
        return {
            "t": self.t,
            "max_abs_residual": self.max_abs_residual,
            "max_normalized_residual": self.max_normalized,
            "probe_points": self.probe_points,
        }


def residual_report(traj, n_probes=20, radius=3.0, seed=0, derivative="trajectory", stride=1):
    """Probe the Fourier residual along a trajectory.

    ``derivative="trajectory"`` differentiates the stored states numerically
    (an independent check of the integration); ``"rhs"`` uses the vector
    field at each state. The normalised residual is ``|r| / (1 + |G|)``.
    """
    rng = np.random.default_rng(seed)
    n = traj.ops.dim

    def ball(k):
        v = rng.standard_normal((k, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * radius * rng.uniform(0, 1, (k, 1)) ** (1.0 / n)

    X, Y = ball(n_probes), ball(n_probes)
    if derivative == "trajectory":
        idx, derivs = trajectory_derivatives(traj)
    elif derivative == "rhs":
        idx = list(range(len(traj.states)))
        derivs = [rhs(traj.states[i], traj.ops) for i in idx]
    else:
        raise ValueError(f"unknown derivative mode {derivative!r}")
    ts, maxes, worst = [], [], 0.0
    for i, d in list(zip(idx, derivs))[::stride]:
        res, mag = _residual_terms(traj.states[i], traj.ops, X, Y, d)
        ts.append(float(traj.times[i]))
        maxes.append(float(np.max(np.abs(res))))
        worst = max(worst, float(np.max(np.abs(res) / (1.0 + mag))))
    probes = [{"x": a.tolist(), "y": b.tolist()} for a, b in zip(X, Y)]
    return ResidualReport(ts, maxes, worst, probes)


# ---------------------------------------------------------------------------
# generator recovery

def _richardson_forward(values, h, noise_floor):
    """Richardson tableau for forward differences at steps ``h, h/2, ...``."""
    f0 = values[0]
    row = [(values[k] - f0) / (h / 2 ** (k - 1)) for k in range(1, len(values))]
    diag = [row[0]]
    tableau = [row]
    for j in range(1, len(row)):
        prev = tableau[-1]
        nxt = [(2**j * prev[k] - prev[k - 1]) / (2**j - 1) for k in range(1, len(prev))]
        tableau.append(nxt)
        diag.append(nxt[-1])
    steps = [float(np.max(np.abs(diag[k] - diag[k - 1]))) for k in range(1, len(diag))]
    # a smooth flow drives the last correction below the floor or shrinks it
    # sharply; noise amplified by 1/h shrinks it by about a factor of two
    if len(steps) >= 2 and steps[-1] > noise_floor and steps[-1] > RICHARDSON_CONTRACTION * steps[-2]:
        raise NoisyFlow(f"Richardson corrections not contracting: {steps}")
    return diag[-1]


def _project_psd(a, name, rtol=1e-6):
    a = symmetrize(a)
    w, U = np.linalg.eigh(a)
    scale = max(float(np.max(np.abs(w))), 1.0)
    if w[0] < -rtol * scale:
        raise NotPSD(f"recovered {name} has eigenvalue {w[0]:.3e}")
    return (U * np.clip(w, 0.0, None)) @ U.T


def recover_generators(flow, h=1e-2, levels=5, noise_floor=1e-6):
    """Recover ``(B, C, D, alpha)`` from the derivative of a kernel flow at zero.

    ``flow`` maps ``t`` to an :class:`EvolutionState`; the generators are
    ``Q'(0)``, ``P'(0)``, ``R'(0)^T`` and ``s'(0)``, estimated by
    Richardson-extrapolated forward differences.
    """
    states = [flow(0.0)] + [flow(h / 2**k) for k in range(levels)]
    n = states[0].dim
    if state_distance(states[0], EvolutionState.initial(n)) > 1e-12:
        raise ValueError("flow(0) is not the identity state")
    get = {
        "s": lambda st: np.array([st.s]),
        "P": lambda st: st.P,
        "Q": lambda st: st.Q,
        "R": lambda st: st.R,
    }
    d = {k: _richardson_forward([f(st) for st in states], h, noise_floor) for k, f in get.items()}
    B = _project_psd(d["Q"], "B")
    C = _project_psd(d["P"], "C")
    return validate_operator_set(B, C, d["R"].T, float(d["s"][0]))


# ---------------------------------------------------------------------------
# moment diagnostic

@dataclass
class MomentReport:
    value: float
    t_at_sup: float
    finite: bool

    def to_dict(self):
        return {"sup_second_moment": self.value, "t_at_sup": self.t_at_sup, "finite": self.finite}


def moment_diagnostic(traj, mu0, T=None):
    """Supremum over ``0 < t <= T`` of the second absolute moment of ``mu(t)``."""
    T = traj.times[-1] if T is None else T
    best, t_best = -math.inf, math.nan
    for t, st in zip(traj.times, traj.states):
        if t <= 0 or t > T * (1 + 1e-12):
            continue
        m = apply_to_initial(st.kernel, mu0).second_moment()
        if not m <= best:
            best, t_best = m, float(t)
    return MomentReport(float(best), t_best, bool(math.isfinite(best)))


__all__ = [
    "Derivative",
    "EvolutionState",
    "MomentReport",
    "ResidualReport",
    "Trajectory",
    "closed_form_C0",
    "closed_form_D0",
    "evolve",
    "integrate",
    "moment_diagnostic",
    "pde_residual_fourier",
    "recover_generators",
    "residual_report",
    "rhs",
    "state_distance",
    "trajectory_derivatives",
]
