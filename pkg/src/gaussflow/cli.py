"""Command-line front end.

Every subcommand reads one JSON config and writes a JSON report (plus data
files) into the output directory. Exit codes: 0 success, 1 a tolerance or
statistical check failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from . import config as cfg
from .errors import ConfigError, GaussflowError
from .flow import (
    EvolutionState,
    closed_form_C0,
    closed_form_D0,
    evolve,
    integrate,
    moment_diagnostic,
    recover_generators,
    residual_report,
    state_distance,
)
from .feynman_kac import fk_kernel_mass, validate_potential
from .io import atomic_write, dump_json, ensemble_csv, save_ensemble_npz
from .kernel import PointMixture, compose
from .operators import random_operator_set
from .paths import (
    CylinderSpec,
    TimeGrid,
    WholeSpace,
    condition_endpoint,
    cylinder_mass,
    gaussianity_check,
    sample_paths,
)

OUTPUT_ENV = "GAUSSFLOW_OUTPUT_DIR"
COMMANDS = ("evolve", "closed-form", "verify", "sample", "cylinder", "fk", "recover")


class Run:
    """Context handed to command functions."""

    def __init__(self, config, out_dir):
        self.config = config
        self.out_dir = out_dir
        self.tol = cfg.tolerances(config)
        self.files = []

    def block(self, name):
        return self.config.get(name, {})

    def write(self, name, data):
        path = os.path.join(self.out_dir, name)
        atomic_write(path, data)
        self.files.append(name)

    @property
    def seed(self):
        return int(self.config.get("seed", 0))

    @property
    def workers(self):
        return int(self.config.get("workers", 1))


# ---------------------------------------------------------------------------
# commands

def _closed_form(ops, t):
    if ops.c_is_zero:
        return closed_form_C0(ops, t)
    if ops.d_is_zero:
        return closed_form_D0(ops, t)
    return None


def cmd_evolve(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("evolve")
    T = cfg._positive(b.get("T", 1.0), "evolve.T")
    steps = cfg._count(b.get("steps", 1000), "evolve.steps")
    traj = integrate(ops, T, n_steps=steps, method=b.get("method", "rk4"),
                     check_error=bool(b.get("check_error", False)), psd_rtol=run.tol["psd_rtol"])
    run.write("trajectory.csv", traj.to_csv())
    run.write("trajectory.json", traj.to_json() + "\n")
    rb = b.get("residual", {})
    mode = "trajectory" if len(traj) >= 5 else "rhs"
    rep = residual_report(traj, n_probes=cfg._count(rb.get("probes", 20), "evolve.residual.probes"),
                          radius=float(rb.get("radius", 3.0)), seed=run.seed, derivative=mode)
    residual = rep.to_dict()
    run.write("residual.json", dump_json(residual))
    results = {
        "T": T,
        "steps": steps,
        "max_normalized_residual": rep.max_normalized,
        "residual_tolerance": run.tol["residual"],
        "final_state": _state_dict(traj.final),
    }
    passed = rep.max_normalized <= run.tol["residual"]
    if b.get("compare_closed_form", False):
        if _closed_form(ops, T) is None:
            raise ConfigError("evolve.compare_closed_form needs C == 0 or D == 0")
        dev = max(state_distance(st, _closed_form(ops, st.t)) for st in traj.states[1:])
        results["closed_form_max_deviation"] = dev
        passed &= dev <= run.tol["closed_form_rtol"]
    return results, passed


def _state_dict(st):
    return {"t": st.t, "s": st.s, "P": st.P.tolist(), "Q": st.Q.tolist(), "R": st.R.tolist()}


def cmd_closed_form(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("closed_form")
    times = b.get("t", [1.0])
    times = times if isinstance(times, list) else [times]
    if _closed_form(ops, 1.0) is None:
        raise ConfigError("closed-form needs C == 0 or D == 0")
    records = []
    for t in times:
        st = _closed_form(ops, float(t))
        rec = st.kernel.to_dict()
        rec["t"] = st.t
        records.append(rec)
    run.write("kernels.json", dump_json(records))
    return {"regime": "C=0" if ops.c_is_zero else "D=0", "kernels": records}, True


def _semigroup_check(ops, times, fault):
    rows = []
    worst = 0.0
    cache = {}

    def at(t):
        if t not in cache:
            cache[t] = evolve(ops, t)
        return cache[t]

    for u in times:
        for v in times:
            Ku, Kv = at(u).kernel, at(v).kernel
            target = at(u + v)
            K = compose(Ku, Kv)
            if fault == "q_perturbation":
                K = type(K)(K.s, K.P, K.Q + 0.01 * np.eye(ops.dim), K.R)
            dev = state_distance(EvolutionState.from_kernel(u + v, K), target)
            rev = state_distance(EvolutionState.from_kernel(u + v, compose(Kv, Ku)), target)
            worst = max(worst, dev)
            rows.append({"u": u, "v": v, "deviation": dev, "reversed_order_deviation": rev})
    return worst, rows


def cmd_verify(run):
    b = run.block("verify")
    if "operators" in run.config:
        ops = cfg.build_operators(run.config, run.tol)
    else:
        rnd = b.get("random", {})
        ops = random_operator_set(cfg._count(rnd.get("n", 4), "verify.random.n"), int(rnd.get("seed", run.seed)))
    suite = b.get("suite", ["semigroup", "recovery", "moment", "residual", "closed_form"])
    fault = b.get("inject_fault")
    if fault not in (None, "q_perturbation"):
        raise ConfigError(f"verify.inject_fault: unknown fault {fault!r}")
    out = {}
    passed = True
    for name in suite:
        if name == "semigroup":
            times = b.get("times", [0.1, 0.4, 0.7, 1.0])
            worst, rows = _semigroup_check(ops, times, fault)
            ok = worst <= run.tol["semigroup"]
            out[name] = {"passed": ok, "max_deviation": worst, "pairs": rows}
        elif name == "recovery":
            rec = recover_generators(lambda t: evolve(ops, t))
            errs = {
                "B": float(np.max(np.abs(rec.B - ops.B))),
                "C": float(np.max(np.abs(rec.C - ops.C))),
                "D": float(np.max(np.abs(rec.D - ops.D))),
                "alpha": abs(rec.alpha - ops.alpha),
            }
            ok = max(errs.values()) <= run.tol["recovery"]
            out[name] = {"passed": ok, "max_error": errs}
        elif name == "moment":
            T = float(b.get("T", 1.0))
            mu0 = cfg.build_initial(b.get("initial"), ops.dim) or PointMixture.dirac(np.zeros(ops.dim))
            traj = integrate(ops, T, n_steps=100)
            rep = moment_diagnostic(traj, mu0, T)
            ok = rep.finite
            out[name] = {"passed": ok, **rep.to_dict()}
        elif name == "residual":
            traj = integrate(ops, float(b.get("T", 1.0)))
            rep = residual_report(traj, seed=run.seed, stride=10)
            ok = rep.max_normalized <= run.tol["residual"]
            out[name] = {"passed": ok, "max_normalized_residual": rep.max_normalized}
        elif name == "closed_form":
            devs = {}
            T = float(b.get("T", 1.0))
            for label, variant in (("C=0", ops.replace(C=np.zeros_like(ops.C))),
                                   ("D=0", ops.replace(D=np.zeros_like(ops.D)))):
                devs[label] = state_distance(integrate(variant, T).final, _closed_form(variant, T))
            ok = max(devs.values()) <= run.tol["closed_form_rtol"]
            out[name] = {"passed": ok, "deviation": devs}
        else:
            raise ConfigError(f"verify.suite: unknown property {name!r}")
        passed &= ok
    return {"operators": ops.to_dict(), "properties": out}, passed


def _terminal_spec(spec, n):
    if spec is None:
        return None
    if "point" in spec:
        return cfg.vector(spec["point"], n, "terminal.point")
    if spec.get("type") == "gaussian":
        return cfg.build_initial(spec, n)
    return cfg.build_set(spec, "terminal")


def cmd_sample(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("sample")
    n = ops.dim
    x = cfg.vector(b.get("x"), n, "sample.x")
    grid = cfg.build_grid(b, "sample.")
    N = cfg._count(b.get("N", 10_000), "sample.N")
    terminal = _terminal_spec(b.get("terminal"), n)
    if terminal is None:
        ens = sample_paths(ops, x, grid, N, run.seed, run.workers)
    else:
        ens = condition_endpoint(ops, x, grid, N, run.seed, terminal, run.workers)
    fmt = b.get("format", "npz")
    if fmt == "npz":
        save_ensemble_npz(os.path.join(run.out_dir, "ensemble.npz"), ens)
        run.files.append("ensemble.npz")
    elif fmt == "csv":
        run.write("ensemble.csv", ensemble_csv(ens))
    else:
        raise ConfigError("sample.format must be npz or csv")
    end = ens.values[:, -1]
    results = {
        "N": N,
        "grid": grid.to_list(),
        "weights_all_zero": bool(np.all(ens.log_weights == 0)),
        "terminal_mean": end.mean(axis=0).tolist(),
        "terminal_var": end.var(axis=0, ddof=1).tolist(),
        "acceptance_rate": ens.acceptance_rate,
    }
    passed = True
    if terminal is None and ops.c_is_zero:
        law = evolve(ops, grid.horizon).kernel.measure_at(x)
        z = (end.mean(axis=0) - law.mean) / np.sqrt(np.diag(law.cov) / N)
        results["terminal_mean_zscores"] = z.tolist()
        passed = bool(np.all(np.abs(z) <= run.tol["sigma"]))
    if b.get("gaussianity", False) and ops.c_is_zero:
        fun = [(t, e) for t in grid.times[1:] for e in np.eye(n)]
        rep = gaussianity_check(ens, fun)
        results["gaussianity"] = rep.to_dict()
        passed &= bool(rep.passed)
    return results, passed


def cmd_cylinder(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("cylinder")
    n = ops.dim
    x = cfg.vector(b.get("x"), n, "cylinder.x")
    grid = cfg.build_grid(b, "cylinder.")
    N = cfg._count(b.get("N", 100_000), "cylinder.N")
    cons = tuple((float(c["t"]), cfg.build_set(c["set"], "cylinder.constraints"))
                 for c in b.get("constraints", []))
    spec = CylinderSpec(cons, cfg.build_set(b.get("terminal"), "cylinder.terminal") or WholeSpace())
    try:
        spec.check(grid)
    except ValueError as exc:
        raise ConfigError(f"cylinder: {exc}") from None
    ens = sample_paths(ops, x, grid, N, run.seed, run.workers)
    res = cylinder_mass(ens, spec)
    results = res.to_dict()
    passed = True
    if "expected" in b:
        exp = float(b["expected"])
        results["expected"] = exp
        passed = abs(res.estimate - exp) <= run.tol["sigma"] * res.stderr or res.estimate == exp
    return results, passed


def cmd_fk(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("fk")
    n = ops.dim
    V = cfg.build_potential(b.get("potential"), n)
    x = cfg.vector(b.get("x"), n, "fk.x")
    t = cfg._positive(b.get("t", 1.0), "fk.t")
    steps = cfg._count(b.get("steps", 1000), "fk.steps")
    N = cfg._count(b.get("N", 100_000), "fk.N")
    A = cfg.build_set(b.get("terminal"), "fk.terminal")
    est = fk_kernel_mass(ops, V, x, t, A=A, N=N, grid=TimeGrid.uniform(t, steps), seed=run.seed,
                         workers=run.workers, rule=b.get("rule", "trapezoid"),
                         experimental_weighted_base=bool(b.get("experimental", False)))
    results = est.to_dict()
    results["potential"] = V.to_dict()
    results["potential_check"] = validate_potential(V, probes=200, seed=run.seed, t_max=t).to_dict()
    passed = True
    if b.get("compare_closed_form", False):
        if V.kind != "quadratic" or A is not None:
            raise ConfigError("fk.compare_closed_form needs a quadratic potential and no terminal set")
        oracle_ops = ops.replace(C=V.params["C_v"], alpha=V.params["c0"])
        st = evolve(oracle_ops, t)
        exact = st.s * math.exp(-0.5 * x @ st.P @ x)
        results["closed_form"] = exact
        results["z_score"] = (est.value - exact) / est.stderr
        passed = abs(est.value - exact) < run.tol["sigma"] * est.stderr
    return results, passed


def cmd_recover(run):
    ops = cfg.build_operators(run.config, run.tol)
    b = run.block("recover")
    rec = recover_generators(lambda t: evolve(ops, t), h=float(b.get("h", 1e-2)),
                             levels=cfg._count(b.get("levels", 5), "recover.levels"))
    errs = {
        "B": float(np.max(np.abs(rec.B - ops.B))),
        "C": float(np.max(np.abs(rec.C - ops.C))),
        "D": float(np.max(np.abs(rec.D - ops.D))),
        "alpha": abs(rec.alpha - ops.alpha),
    }
    return {"recovered": rec.to_dict(), "max_error": errs}, max(errs.values()) <= run.tol["recovery"]


HANDLERS = {
    "evolve": cmd_evolve,
    "closed-form": cmd_closed_form,
    "verify": cmd_verify,
    "sample": cmd_sample,
    "cylinder": cmd_cylinder,
    "fk": cmd_fk,
    "recover": cmd_recover,
}


# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def build_parser():
    p = argparse.ArgumentParser(prog="gaussflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="experiment config (JSON), or a report emitted earlier")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    return p


def run_command(command, config, out_dir):
    """Execute one command; returns ``(report, exit_code)``."""
    started = time.perf_counter()
    run = Run(config, out_dir)
    results, passed = HANDLERS[command](run)
    report = {
        "command": command,
        "config": config,
        "config_hash": cfg.config_hash(config),
        "passed": bool(passed),
        "results": _jsonable(results),
        "files": run.files,
        "versions": {
            "gaussflow": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_clock_seconds": time.perf_counter() - started,
    }
    name = command.replace("-", "_") + "_report.json"
    atomic_write(os.path.join(out_dir, name), dump_json(report))
    return report, 0 if passed else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        config = cfg.parse_config_text(text)
        if args.seed is not None:
            config["seed"] = args.seed
        out_dir = args.out or config.get("output_dir") or os.environ.get(OUTPUT_ENV) or "gaussflow-out"
        report, code = run_command(args.command, config, out_dir)
    except (ConfigError, OSError) as exc:
        print(f"{args.config}: config error: {exc}", file=sys.stderr)
        return 2
    except GaussflowError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    status = "PASS" if code == 0 else "FAIL"
    print(f"{args.command}: {status} ({os.path.join(out_dir, args.command.replace('-', '_') + '_report.json')})")
    return code


if __name__ == "__main__":
    sys.exit(main())
