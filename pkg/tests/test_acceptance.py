"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one ``criterion N: PASS|FAIL`` line; the lines are printed
in the terminal summary (see ``conftest.py``) and echoed to stdout.
"""

import functools
import math
import time

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

from gaussflow.feynman_kac import Potential, fk_kernel_mass
from gaussflow.flow import (
    EvolutionState,
    Trajectory,
    closed_form_C0,
    closed_form_D0,
    evolve,
    integrate,
    recover_generators,
    residual_report,
    state_distance,
)
from gaussflow.kernel import compose
from gaussflow.operators import power_law_spectrum, random_operator_set, validate_operator_set
from gaussflow.paths import Box, CylinderSpec, TimeGrid, cylinder_mass, gaussianity_check, sample_paths

from conftest import ACCEPTANCE_LINES

DIMS = (1, 2, 4, 6)
N_INSTANCES = 20


def record(number, title, ok, detail, elapsed=None, limit=None):
    timing = ""
    if limit is not None:
        ok = ok and elapsed < limit
        timing = f"; {elapsed:.1f} s (limit {limit:g} s)"
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}: {detail}{timing}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def ops_1d(B, C, D=0.0, alpha=0.0):
    return validate_operator_set([[B]], [[C]], [[D]], alpha)


# ---------------------------------------------------------------------------
# criteria 1, 2 and 5 share their trajectories

@functools.lru_cache(maxsize=None)
def closed_form_cases(kind):
    """20 seeded instances cycling through n in {1, 2, 4, 6}, integrated on [0, 2]."""
    cases = []
    for i in range(N_INSTANCES):
        n = DIMS[i % len(DIMS)]
        if kind == "C0":
            ops = random_operator_set(n, seed=1000 + i, with_C=False)
        else:
            ops = random_operator_set(n, seed=2000 + i, with_D=False)
        cases.append((ops, integrate(ops, 2.0)))
    return cases


def worst_closed_form_deviation(kind):
    exact = closed_form_C0 if kind == "C0" else closed_form_D0
    worst = 0.0
    for ops, traj in closed_form_cases(kind):
        for st in traj.states:
            worst = max(worst, state_distance(st, exact(ops, st.t)))
    return worst


def test_criterion_01_drift_diffusion_closed_form():
    start = time.perf_counter()
    worst = worst_closed_form_deviation("C0")
    elapsed = time.perf_counter() - start
    assert record(1, "integration vs C=0 closed form", worst <= 1e-8,
                  f"max relative deviation {worst:.2e} over {N_INSTANCES} instances, all grid times "
                  f"(tol 1e-8)", elapsed, 10)


def test_criterion_02_mehler_closed_form():
    start = time.perf_counter()
    worst = worst_closed_form_deviation("D0")
    elapsed = time.perf_counter() - start
    commutators = [np.linalg.norm(o.B @ o.C - o.C @ o.B) for o, _ in closed_form_cases("D0") if o.dim == 4]
    noncommuting = min(commutators) > 1e-3
    assert record(2, "integration vs D=0 operator Mehler forms", worst <= 1e-8 and noncommuting,
                  f"max relative deviation {worst:.2e} (tol 1e-8); n=4 commutator norms "
                  f">= {min(commutators):.2f}", elapsed, 10)


def test_criterion_03_classical_mehler_density():
    start = time.perf_counter()
    ops = ops_1d(1.0, 1.0)
    worst = 0.0
    for t in (0.1, 0.5, 1.0, 2.0):
        K = closed_form_D0(ops, t).kernel
        sh, ch = math.sinh(t), math.cosh(t)
        for x in (-1.0, 0.0, 1.0):
            for y in (-1.0, 0.0, 1.0):
                ref = (2 * math.pi * sh) ** -0.5 * math.exp(-((x * x + y * y) * ch - 2 * x * y) / (2 * sh))
                worst = max(worst, abs(K.density([x], [y]) - ref) / ref)
    elapsed = time.perf_counter() - start
    assert record(3, "classical Mehler density", worst <= 1e-12,
                  f"max relative error {worst:.2e} (tol 1e-12)", elapsed, 1)


def test_criterion_04_semigroup():
    start = time.perf_counter()
    grid_u = [round(0.1 * k, 1) for k in range(1, 11)]
    worst = {}
    for label, kw in (("C=0", dict(with_C=False)), ("D=0", dict(with_D=False)), ("general", {})):
        for n in (1, 2, 4):
            ops = random_operator_set(n, seed=300 + n, **kw)
            traj = integrate(ops, 2.0, n_steps=2000)
            idx = lambda t: round(t * 1000)
            for u in grid_u:
                for v in grid_u:
                    K = compose(traj.states[idx(u)].kernel, traj.states[idx(v)].kernel)
                    dev = state_distance(EvolutionState.from_kernel(u + v, K), traj.states[idx(u + v)])
                    worst[label] = max(worst.get(label, 0.0), dev)
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert record(4, "semigroup compose(K(u), K(v)) = K(u+v)", max(worst.values()) <= 1e-8,
                  f"max deviation {detail} (tol 1e-8)", elapsed, 30)


def test_criterion_05_fourier_residual():
    cases = closed_form_cases("C0") + closed_form_cases("D0")
    start = time.perf_counter()
    worst = max(residual_report(traj, n_probes=20, seed=k).max_normalized for k, (_, traj) in enumerate(cases))
    # negative control: move one stored state off the flow (Q + 0.01 I) and probe
    # the same trajectory again; the finite-difference derivatives around it break
    control = []
    for k, (ops, traj) in enumerate(cases):
        i = len(traj.states) // 2
        st = traj.states[i]
        off = EvolutionState(st.t, st.s, st.P, st.Q + 0.01 * np.eye(ops.dim), st.R)
        bent = Trajectory(traj.times, traj.states[:i] + (off,) + traj.states[i + 1:], ops)
        rep = residual_report(bent, n_probes=20, seed=k)
        control.append(max(rep.max_abs_residual))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-7 and min(control) > 1e-3
    assert record(5, "Fourier residual along 40 trajectories", ok,
                  f"max |r|/(1+|G|) {worst:.2e} (tol 1e-7); negative control min {min(control):.2e} (> 1e-3)",
                  elapsed, 30)


def test_criterion_06_generator_recovery():
    start = time.perf_counter()
    worst = 0.0
    for i in range(10):
        n = 1 + i % 4
        ops = random_operator_set(n, seed=600 + i)
        rec = recover_generators(lambda t: evolve(ops, t))
        errs = [np.max(np.abs(getattr(rec, m) - getattr(ops, m))) for m in "BCD"]
        worst = max(worst, *errs, abs(rec.alpha - ops.alpha))
    elapsed = time.perf_counter() - start
    assert record(6, "generator recovery round trip", worst <= 1e-4,
                  f"max error {worst:.2e} (tol 1e-4)", elapsed, 30)


# ---------------------------------------------------------------------------
# Monte Carlo criteria; 10 re-runs 7 and 8 with other worker counts

FK_CASES = ((1.0, 0.5, 0.0), (1.0, 1.0, 1.0), (2.0, 0.5, 0.5))
# one fixed seed for every Monte Carlo criterion
MC_SEED = 7
MC_N = 100_000


@functools.lru_cache(maxsize=None)
def fk_estimates(workers):
    out = []
    for c, t, x in FK_CASES:
        out.append(fk_kernel_mass(ops_1d(1.0, 0.0), Potential.quadratic([[c]]), [x], t, N=MC_N,
                                  grid=TimeGrid.uniform(t, 1000), seed=MC_SEED, workers=workers))
    return out


BOX_T = (0.4, 1.0)
BOXES = ((-0.5, 1.0), (0.2, 2.0))


@functools.lru_cache(maxsize=None)
def cylinder_estimates(workers):
    brownian = ops_1d(1.0, 0.0)
    half = cylinder_mass(sample_paths(brownian, [0.0], TimeGrid.uniform(1.0, 2), MC_N, seed=MC_SEED, workers=workers),
                         CylinderSpec(((0.5, Box([0.0], [np.inf])),)))
    ens = sample_paths(brownian, [0.0], TimeGrid([0.0, BOX_T[0], BOX_T[1], 1.5]), MC_N, seed=MC_SEED, workers=workers)
    spec = CylinderSpec(tuple((t, Box([a], [b])) for t, (a, b) in zip(BOX_T, BOXES)))
    return half, cylinder_mass(ens, spec)


def box_oracle():
    (t1, t2), (b1, b2) = BOX_T, BOXES
    s1, s12 = math.sqrt(t1), math.sqrt(t2 - t1)
    inner = lambda y: norm.pdf(y, scale=s1) * (norm.cdf((b2[1] - y) / s12) - norm.cdf((b2[0] - y) / s12))
    return quad(inner, b1[0], b1[1], epsabs=1e-13, epsrel=1e-12)[0]


def test_criterion_07_feynman_kac_cross_validation():
    start = time.perf_counter()
    estimates = fk_estimates(1)
    elapsed = time.perf_counter() - start
    parts, ok = [], True
    for (c, t, x), est in zip(FK_CASES, estimates):
        st = closed_form_D0(ops_1d(1.0, c), t)
        exact = st.s * math.exp(-0.5 * st.P[0, 0] * x * x)
        z = (est.value - exact) / est.stderr
        rel = est.stderr / est.value
        ok &= abs(z) < 3 and rel < 0.02
        parts.append(f"(c,t,x)=({c:g},{t:g},{x:g}) z={z:+.2f} se/est={rel:.2%}")
    assert record(7, "Feynman-Kac vs Mehler mass", ok, "; ".join(parts), elapsed, 120)


def test_criterion_08_cylinder_masses_and_gaussianity():
    start = time.perf_counter()
    half, boxes = cylinder_estimates(1)
    oracle = box_oracle()
    z_half = (half.estimate - 0.5) / half.stderr
    z_box = (boxes.estimate - oracle) / boxes.stderr
    ens = sample_paths(validate_operator_set(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))),
                       [0.0, 0.0], TimeGrid.uniform(1.0, 4), MC_N, seed=MC_SEED)
    funcs = [(0.25, [1.0, 0.0]), (0.5, [0.0, 1.0]), (1.0, [1.0, 1.0])]
    clean = gaussianity_check(ens, funcs).passed
    cubed = gaussianity_check(ens, funcs, values=ens.values**3).passed
    elapsed = time.perf_counter() - start
    ok = abs(z_half) < 3 and abs(z_box) < 3 and clean is True and cubed is False
    assert record(8, "cylinder masses and Gaussianity", ok,
                  f"half-line z={z_half:+.2f}; two-time boxes z={z_box:+.2f} (oracle {oracle:.6f}); "
                  f"gaussianity clean={clean} cubed={cubed}", elapsed, 120)


def test_criterion_09_dimension_truncation():
    start = time.perf_counter()
    dims = (4, 8, 16, 32)
    traces = []
    for n in dims:
        z = np.zeros((n, n))
        ops = validate_operator_set(np.diag(power_law_spectrum(2, n)), z, z)
        traces.append(float(np.trace(integrate(ops, 1.0).final.Q)))
    inc = np.diff(traces)
    tails = np.array([sum(k**-2.0 for k in range(a + 1, 2 * a + 1)) for a in dims[:-1]])
    elapsed = time.perf_counter() - start
    monotone = bool(np.all(inc > 0) and np.all(np.diff(inc) < 0))
    consistent = bool(np.allclose(inc, tails, rtol=1e-10))
    assert record(9, "dimension truncation", monotone and consistent,
                  f"tr Q increments {', '.join(f'{v:.5f}' for v in inc)} "
                  f"monotone={monotone}, match k^-2 tails={consistent}", elapsed, 10)


def test_criterion_10_determinism_across_workers():
    fk1, (half1, box1) = fk_estimates(1), cylinder_estimates(1)
    same = True
    for workers in (2, 4):
        fk, (half, box) = fk_estimates(workers), cylinder_estimates(workers)
        same &= all((a.value, a.stderr) == (b.value, b.stderr) for a, b in zip(fk1, fk))
        same &= (half.estimate, half.stderr, box.estimate, box.stderr) == (
            half1.estimate, half1.stderr, box1.estimate, box1.stderr)
    assert record(10, "bit-identical estimates for workers 1, 2, 4", same,
                  "criteria 7 and 8 estimates and stderrs compared with ==")
