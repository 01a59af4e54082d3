"""Command-line entry point: ``rsvol {validate,chain,bounds,simulate,stationary,reproduce-paper}``.

Exit codes: 0 success, 1 domain failure (invalid model or failed
reproduction check), 2 file or parse failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, ctmc, mmatrix, moment_bounds, sde_engine, stationary, theorem_checker
from .model import ModelFileError, ModelSpec, ModelValidationError, load_model, paper_example

logger = logging.getLogger("rsvol")

DEFAULT_SEED = 42

PAPER_PI = [0.2773, 0.2277, 0.2681, 0.2269]
PAPER_P_DELTA = [
    [0.9993, 0.0003, 0.0002, 0.0002],
    [0.0003, 0.9991, 0.0003, 0.0003],
    [0.0003, 0.0002, 0.9992, 0.0003],
    [0.0002, 0.0003, 0.0004, 0.9991],
]
PAPER_G = [[0, 3, 2, 2], [3, 0, 3, 3], [3, 2, 1, 3], [2, 3, 4, 0]]
PAPER_RHO = 8.5208


class _Exit(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _model_digest(spec: ModelSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, spec: ModelSpec, config: dict, files: list[Path]) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "model": spec.to_dict(),
        "model_digest": _model_digest(spec),
        "config": config,
        "seed": config.get("seed"),
        "outputs": {f.name: _sha256_file(f) for f in sorted(files)},
    }
    path = out / "manifest.json"
    _write_json(path, manifest)
    return path


def _load(path: str) -> ModelSpec:
    try:
        return load_model(path)
    except ModelFileError as exc:
        raise _Exit(2, str(exc)) from exc
    except ModelValidationError as exc:
        raise _Exit(1, str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Exit(2, f"cannot create {out}: {exc}") from exc
    return out


def _sim_config(args, spec: ModelSpec, **overrides) -> sde_engine.SimConfig:
    kw = dict(
        dt=args.dt,
        t_end=args.t_end,
        scheme=args.scheme,
        chain_mode=args.chain,
        delta=args.delta,
        positivity=args.positivity,
        n_paths=args.n_paths,
        base_seed=args.seed,
        thin=args.thin,
    )
    kw.update(overrides)
    try:
        return sde_engine.SimConfig(**kw)
    except ValueError as exc:
        raise _Exit(1, f"invalid simulation settings: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    spec = _load(args.model)
    report = theorem_checker.full_report(spec, args.p)
    print(report.to_text())
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    if report.assumptions_failed:
        logger.warning("model is valid but %d certificate condition(s) fail", len(report.assumptions_failed))
    return 0


def cmd_chain(args) -> int:
    spec = _load(args.model)
    out = _out_dir(args)
    g = ctmc.Generator(spec.q)
    try:
        pi = ctmc.invariant_distribution(g)
    except ctmc.ReducibleChainError as exc:
        raise _Exit(1, str(exc)) from exc
    P = ctmc.transition_matrix(g, args.delta)
    if args.chain == "exact":
        path = ctmc.sample_path_exact(g, spec.i0 - 1, args.t_end, args.seed)
    else:
        path = ctmc.sample_path_discretized(g, spec.i0 - 1, args.t_end, args.delta, args.seed)
    occ = ctmc.occupation_fractions(path, spec.m)
    chain_json = out / "chain.json"
    _write_json(
        chain_json,
        {"pi": pi.tolist(), "delta": args.delta, "P_delta": P.tolist(),
         "occupation": occ.tolist(), "n_jumps": path.n_jumps},
    )
    path_csv = out / "regime_path.csv"
    path.to_csv(path_csv)
    _write_manifest(out, "chain", spec,
                    {"delta": args.delta, "t_end": args.t_end, "seed": args.seed, "chain": args.chain},
                    [chain_json, path_csv])
    np.set_printoptions(precision=6, suppress=True)
    print(f"pi = {pi}")
    print(f"P({args.delta:g}) =\n{P}")
    print(f"occupation over [0, {args.t_end:g}] = {occ}")
    return 0


def bounds_payload(spec: ModelSpec, p: float) -> dict:
    case, msg, env = moment_bounds.envelope_for(spec, p)
    payload = {
        "p": p,
        "case": case.value,
        "message": msg,
        "lambda_p": None,
        "C_p": None,
        "beta_hat": None,
        "asymptotic_bound": None,
        "theta_one_branch": False,
    }
    if env is not None:
        payload.update(
            lambda_p=env.lambda_p,
            C_p=env.C_p,
            beta_hat=env.beta_hat,
            asymptotic_bound=env.asymptotic_bound,
            theta_one_branch=env.theta_one_branch,
        )
    else:
        payload["message"] = "no certificate: " + msg
    return payload


def cmd_bounds(args) -> int:
    spec = _load(args.model)
    try:
        payload = bounds_payload(spec, args.p)
    except moment_bounds.ThetaOneError as exc:
        payload = {"p": args.p, "case": "NotApplicable", "message": f"no certificate: {exc}",
                   "lambda_p": None, "C_p": None, "beta_hat": None, "asymptotic_bound": None,
                   "theta_one_branch": True}
    print(json.dumps(payload, indent=2))
    if args.out_dir:
        out = _out_dir(args)
        f = out / "bounds.json"
        _write_json(f, payload)
        _write_manifest(out, "bounds", spec, {"p": args.p, "seed": None}, [f])
    return 0


def cmd_simulate(args) -> int:
    spec = _load(args.model)
    out = _out_dir(args)
    cfg = _sim_config(args, spec)
    try:
        batch = sde_engine.simulate_batch(spec, cfg, workers=args.workers)
    except sde_engine.SimulationError as exc:
        raise _Exit(1, str(exc)) from exc
    files = []
    n_save = cfg.n_paths if args.save_paths is None else min(args.save_paths, cfg.n_paths)
    for k in range(n_save):
        f = out / f"path_{k:05d}.csv"
        batch[k].to_csv(f)
        files.append(f)
    grid = batch[0].times if cfg.chain_mode is sde_engine.ChainMode.DISCRETIZED else np.linspace(
        0, cfg.t_end, 101)
    curve = stationary.moment_curve(batch, args.p, grid)
    case, _, env = moment_bounds.envelope_for(spec, args.p)
    f = out / "moment_curve.csv"
    curve.to_csv(f, None if env is None else moment_bounds.envelope_curve(env, grid))
    files.append(f)
    f = out / "batch.json"
    _write_json(f, batch.manifest())
    files.append(f)
    _write_manifest(out, "simulate", spec, {**cfg.to_dict(), "seed": cfg.base_seed, "p": args.p}, files)
    print(f"simulated {cfg.n_paths} path(s); reflected-step fraction {batch.reflected_fraction:.3g}")
    print(f"batch digest {batch.digest()}")
    if batch.reflected_fraction > 0.01:
        logger.warning("more than 1%% of steps needed a positivity fix; consider a smaller dt")
    return 0


def cmd_stationary(args) -> int:
    spec = _load(args.model)
    out = _out_dir(args)
    cfg = _sim_config(args, spec, n_paths=1, thin=1)
    burn_in = stationary.default_burn_in(spec) if args.burn_in is None else args.burn_in
    try:
        traj = sde_engine.simulate_path(spec, cfg, 0)
        law = stationary.empirical_law(traj, burn_in)
    except (sde_engine.SimulationError, stationary.InsufficientDataError) as exc:
        raise _Exit(1, str(exc)) from exc
    dens, cdf = out / "law_density.csv", out / "law_cdf.csv"
    law.to_csv(dens, cdf)
    erg = out / "ergodic.csv"
    with open(erg, "w") as fh:
        fh.write("f,time_average,t_end,burn_in\n")
        for name in ("min_k", "square", "truncated_identity"):
            avg = stationary.ergodic_average(traj, name, burn_in)
            fh.write(f"{name},{avg.time_average!r},{avg.t_end!r},{avg.burn_in!r}\n")
    occ = stationary.regime_occupation(traj, spec.m)
    summary = out / "stationary.json"
    _write_json(summary, {"mean": law.mean, "variance": law.variance, "samples": law.sample_count,
                          "burn_in": burn_in, "occupation": occ.tolist()})
    _write_manifest(out, "stationary", spec, {**cfg.to_dict(), "seed": cfg.base_seed,
                                             "burn_in": burn_in}, [dens, cdf, erg, summary])
    print(f"stationary mean {law.mean:.6g}, variance {law.variance:.6g} "
          f"from {law.sample_count} samples after burn-in {burn_in:g}")
    return 0


# ---------------------------------------------------------------------------
# Reproduction of the four-regime example
# ---------------------------------------------------------------------------

def _check(rows: list, name: str, value, expected, tol, passed: bool) -> None:
    rows.append({"name": name, "value": value, "expected": expected, "tolerance": tol,
                 "passed": bool(passed)})


def reproduce(spec: ModelSpec, out: Path, seed: int, n_paths: int, dt: float,
              stationary_t_end: float, occupation_t_end: float, workers: int | None) -> dict:
    rows: list[dict] = []
    info: dict = {}
    files: list[Path] = []
    g = ctmc.Generator(spec.q)

    pi = ctmc.invariant_distribution(g)
    _check(rows, "pi", pi.tolist(), PAPER_PI, 5e-4, np.abs(pi - PAPER_PI).max() <= 5e-4)
    P = ctmc.transition_matrix(g, 1e-4)
    _check(rows, "P(1e-4)", P.tolist(), PAPER_P_DELTA, 1e-4,
           np.abs(P - np.array(PAPER_P_DELTA)).max() <= 1e-4)
    semigroup = float(np.abs(ctmc.transition_matrix(g, 0.3)
                             - ctmc.transition_matrix(g, 0.1) @ ctmc.transition_matrix(g, 0.2)).max())
    _check(rows, "semigroup P(0.3) = P(0.1) P(0.2)", semigroup, 0.0, 1e-10, semigroup <= 1e-10)

    rep = mmatrix.certify(spec, 2.0)
    _check(rows, "s", rep.s, 11.0, 0.0, rep.s == 11.0)
    _check(rows, "A(2) nonsingular M-matrix", rep.verdict, True, None, rep.verdict)
    rho_printed = mmatrix.spectral_radius(np.array(PAPER_G, dtype=float))
    matches = {"G = sI - A": abs(rep.rho_G - PAPER_RHO) <= 1e-3,
               "printed G": abs(rho_printed - PAPER_RHO) <= 1e-3}
    _check(rows, "rho(G)", {"G = sI - A": rep.rho_G, "printed G": rho_printed}, PAPER_RHO, 1e-3,
           any(matches.values()))
    info["rho_matches"] = matches
    info["G_equals_printed"] = bool(np.array_equal(rep.G, np.array(PAPER_G, dtype=float)))
    info["A(2)"] = rep.A.tolist()
    aresid = float(np.abs(rep.A @ rep.beta - 1).max()) if rep.verdict else None
    _check(rows, "A beta = 1, beta > 0", aresid, 0.0, 1e-10,
           rep.verdict and aresid <= 1e-10 and bool(np.all(rep.beta > 0)))

    report = theorem_checker.full_report(spec, 2.0)
    _check(rows, "positivity certificate", report.positivity.holds, True, None, report.positivity.holds)
    _check(rows, "moment case", report.moment_case.value, "Case2", None,
           report.moment_case is moment_bounds.HypothesisCase.CASE2)
    _check(rows, "stationarity certificate (theta = 1/2)", report.recurrence_sqrt.holds, True, None,
           report.recurrence_sqrt.holds)
    env = report.envelope

    cfg = sde_engine.SimConfig(dt=dt, t_end=10.0, n_paths=n_paths, base_seed=seed,
                               thin=max(1, int(round(0.1 / dt))))
    batch = sde_engine.simulate_batch(spec, cfg, workers=workers)
    grid = batch[0].times
    curve = stationary.moment_curve(batch, 2.0, grid)
    info["batch_digest"] = batch.digest()
    if env is not None:
        env_vals = moment_bounds.envelope_curve(env, grid)
        slack = float(np.max(curve.estimates - env_vals - 3 * curve.std_errors))
        _check(rows, "E[X_t^2] <= envelope + 3 SE on [0, 10]", slack, "<= 0", 0.0, slack <= 0)
    else:
        env_vals = None
    f = out / "moment_curve.csv"
    curve.to_csv(f, env_vals)
    files.append(f)
    t_l, lyap = stationary.lyapunov_estimate(curve)
    info["lyapunov_t10"] = float(lyap[-1])
    min_x = float(min(tr.x.min() for tr in batch))
    _check(rows, "all states positive", min_x, "> 0", None, min_x > 0)
    _check(rows, "reflected-step fraction", batch.reflected_fraction, "< 0.01", 0.01,
           batch.reflected_fraction < 0.01)

    f = out / "figure1_path.csv"
    sde_engine.simulate_path(spec, sde_engine.SimConfig(dt=dt, t_end=10.0, base_seed=seed,
                                                        chain_mode="exact"), 0).to_csv(f)
    files.append(f)

    i0 = spec.i0 - 1
    for label, path in (
        ("exact", ctmc.sample_path_exact(g, i0, occupation_t_end, seed)),
        ("discretized", ctmc.sample_path_discretized(g, i0, occupation_t_end, 1e-4, seed)),
    ):
        occ = ctmc.occupation_fractions(path, spec.m)
        _check(rows, f"occupation ({label})", occ.tolist(), PAPER_PI, 0.01,
               np.abs(occ - PAPER_PI).max() <= 0.01)

    long_cfg = dict(dt=dt, t_end=stationary_t_end)
    burn_in = stationary.default_burn_in(spec)
    laws = [
        stationary.empirical_law(
            sde_engine.simulate_path(spec, sde_engine.SimConfig(base_seed=s, **long_cfg), 0), burn_in)
        for s in (seed, seed + 1)
    ]
    ks = stationary.law_ks_distance(*laws)
    _check(rows, "KS distance between two long runs", ks, "<= 0.02", 0.02, ks <= 0.02)
    dens, cdf = out / "law_density.csv", out / "law_cdf.csv"
    laws[0].to_csv(dens, cdf)
    files += [dens, cdf]

    summary = {
        "comparisons": rows,
        "info": info,
        "all_passed": all(r["passed"] for r in rows),
        "outputs": {p.name: _sha256_file(p) for p in files},
    }
    f = out / "summary.json"
    _write_json(f, summary)
    files.append(f)
    _write_manifest(out, "reproduce-paper", spec,
                    {"seed": seed, "n_paths": n_paths, "dt": dt, "stationary_t_end": stationary_t_end,
                     "occupation_t_end": occupation_t_end}, files)
    return summary


def cmd_reproduce(args) -> int:
    spec = paper_example() if args.model is None else _load(args.model)
    out = _out_dir(args)
    try:
        summary = reproduce(spec, out, args.seed, args.n_paths, args.dt,
                            args.stationary_t_end, args.occupation_t_end, args.workers)
    except (ctmc.ReducibleChainError, sde_engine.SimulationError) as exc:
        raise _Exit(1, str(exc)) from exc
    for row in summary["comparisons"]:
        print(f"{'PASS' if row['passed'] else 'FAIL'}  {row['name']}")
    print(f"(1/t) log E[X_t^2] at t=10: {summary['info']['lyapunov_t10']:.4f}")
    return 0 if summary["all_passed"] else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_sim_flags(p: argparse.ArgumentParser, t_end: float, n_paths: int = 1) -> None:
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-end", type=float, default=t_end)
    p.add_argument("--n-paths", type=int, default=n_paths)
    p.add_argument("--scheme", choices=["euler", "milstein"], default="milstein")
    p.add_argument("--chain", choices=["exact", "discretized"], default="discretized")
    p.add_argument("--delta", type=float, default=None,
                   help="regime redraw step for --chain discretized (default: dt)")
    p.add_argument("--positivity", choices=["reflect", "reject"], default="reflect")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsvol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a model file and print certificates")
    p.add_argument("model")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--json", action="store_true", help="also print the JSON report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("chain", help="invariant distribution, P(delta) and a sampled regime path")
    p.add_argument("model")
    p.add_argument("--delta", type=float, default=1e-4)
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--chain", choices=["exact", "discretized"], default="exact")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("bounds", help="M-matrix certificate and p-th moment constants")
    p.add_argument("model")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="simulate trajectories")
    p.add_argument("model")
    _add_sim_flags(p, t_end=10.0, n_paths=1)
    p.add_argument("--p", type=float, default=2.0, help="moment order for moment_curve.csv")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--save-paths", type=int, default=None,
                   help="number of per-path CSV files to write (default: all)")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stationary", help="empirical stationary law from one long path")
    p.add_argument("model")
    _add_sim_flags(p, t_end=2000.0)
    p.add_argument("--burn-in", type=float, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_stationary)

    p = sub.add_parser("reproduce-paper", help="reproduce the built-in four-regime example")
    p.add_argument("--model", default=None, help="override the built-in model")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--n-paths", type=int, default=2000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--stationary-t-end", type=float, default=2000.0)
    p.add_argument("--occupation-t-end", type=float, default=1e4)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", default="out/reproduce")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _Exit as exc:
        if str(exc):
            print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
