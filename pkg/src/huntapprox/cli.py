"""Command line experiment runner.

Usage::

    huntapprox SUBCOMMAND --config PATH [--seed N] [--out DIR] [--threads N] [--tol-scale X]

Subcommands: ``capacity``, ``yosida-converge``, ``simulate``, ``exit-bound``,
``report`` and ``selftest``. ``--config builtin:NAME`` selects one of the
packaged reference configs. Exit status is 0 on success, 2 for invalid
configuration or arguments and 3 when a numerical invariant fails.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import platform
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import ExperimentConfig, load_config, parse_config
from .diagnostics import build_separating_family, generator_bound_check, weak_convergence_probe
from .exceptions import ConfigError, InvariantViolation, NumericalFailure
from .kernels import format_kernel, resolvent
from .potential import (
    E_N_ALPHA_GRID,
    build_modified_sequence,
    capacity,
    capacity_dual_lower_bound,
    capacity_markov_inequality,
)
from .selftest import run_selftest
from .simulator import PATH_FORMAT_HEADER, check_two_excessive, mc_estimate, mc_exit_bounds, simulate_paths
from .yosida import approx_semigroup, convergence_table, yosida_generator

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = {
    "capacity": "capacities of the configured sets with dual and Markov-inequality checks",
    "yosida-converge": "sup and L2 errors of the Yosida semigroups against exp(tL)",
    "simulate": "sample paths of the approximating chain and compare marginals",
    "exit-bound": "Monte Carlo exit-time bound against e_hat along the set sequence",
    "report": "generator bounds and weak-convergence diagnostics",
    "selftest": "run the built-in closed-form checks",
}


# --- output helpers ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Bundle:
    """Collects the files of one run and writes the manifest last."""

    def __init__(self, out_dir: Path, subcommand: str):
        self.dir = out_dir
        self.subcommand = subcommand
        self.files: dict[str, str] = {}
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        out_dir.mkdir(parents=True, exist_ok=True)

    def _put(self, name: str, text: str):
        data = text.encode()
        (self.dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self._put(name, buf.getvalue())

    def plot(self, name: str, xs, ys, xlabel: str, ylabel: str):
        lines = [f"# {xlabel} {ylabel}"]
        lines += [f"{_fmt(float(x))} {_fmt(float(y))}" for x, y in zip(xs, ys)]
        self._put(name, "\n".join(lines) + "\n")

    def text(self, name: str, text: str):
        self._put(name, text)

    def manifest(self, cfg: ExperimentConfig | None, seeds: dict, overrides: dict, extra: dict | None = None):
        doc = {
            "tool": "huntapprox",
            "subcommand": self.subcommand,
            "config": None if cfg is None else {
                "source": Path(cfg.source).name,
                "sha256": cfg.config_hash,
                "model_kind": cfg.model_kind,
                "n_states": cfg.generator.n_states,
                "grids": {k: getattr(cfg.grids, k).tolist() for k in ("alpha", "beta", "l", "t")},
                "tolerances": vars(cfg.tolerances),
            },
            "overrides": overrides,
            "seeds": seeds,
            "versions": {
                "huntapprox": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pyyaml": yaml.__version__,
            },
            "outputs": dict(sorted(self.files.items())),
            "timestamps": {
                "started": self.started,
                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            },
        }
        if extra:
            doc["results"] = json.loads(json.dumps(extra, default=float))
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _cell_seed(seed: int, *key: int) -> int:
    """Independent 63-bit seed for one cell of a sweep."""
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1, np.uint64)[0] >> np.uint64(1))


# --- subcommands ------------------------------------------------------------------

def run_capacity(cfg: ExperimentConfig, out: Bundle, threads: int) -> dict:
    L, sp, tol = cfg.generator, cfg.space, cfg.tolerances
    rows, failures = [], []
    for i, U in enumerate(cfg.capacity_sets, start=1):
        rep = capacity(U, sp, L)
        dual = capacity_dual_lower_bound(U, sp, L, 32, np.random.default_rng(_cell_seed(cfg.mc.seed, i)), include_one=False)
        mk = capacity_markov_inequality(rep.e_U, 0.5, sp, L, tol=tol.excessive)
        margin = mk.rhs - mk.lhs
        if dual > rep.value + tol.excessive:
            failures.append(f"dual lower bound exceeds capacity for set {i} ({dual:.17g} > {rep.value:.17g})")
        if not mk.passed:
            failures.append(f"capacity Markov inequality fails for set {i} (margin {margin:.3e})")
        rows.append((i, int(np.count_nonzero(U)), rep.value, dual, margin))
    out.csv("capacity.csv", ["set_id", "size", "capacity", "dual_lower_bound", "markov_margin"], rows)
    out.plot("capacity.dat", [r[0] for r in rows], [r[2] for r in rows], "set_id", "capacity")
    out.text("kernel_G1.txt", format_kernel(resolvent(L, 1.0).matrix))
    if failures:
        raise InvariantViolation("; ".join(failures))
    return {"sets": len(rows)}


def run_yosida(cfg: ExperimentConfig, out: Bundle, threads: int) -> dict:
    L, sp = cfg.generator, cfg.space
    rows, orders = [], {}
    for t in cfg.grids.t:
        tab = convergence_table(L, cfg.yosida_f, float(t), cfg.grids.beta, sp)
        orders[_fmt(float(t))] = tab.fitted_order
        for b, s, l2 in zip(tab.betas, tab.sup_errors, tab.l2_errors):
            rows.append((float(t), b, s, l2, tab.fitted_order))
        out.plot(f"yosida_converge_t{_fmt(float(t))}.dat", tab.betas, tab.sup_errors, "beta", "sup_error")
    out.csv("yosida_converge.csv", ["t", "beta", "sup_error", "l2_error", "fitted_order"], rows)
    return {"fitted_order": orders}


def run_simulate(cfg: ExperimentConfig, out: Bundle, threads: int) -> dict:
    T, seed = cfg.mc.horizon, cfg.mc.seed
    if cfg.grids.t.max() > T:
        raise ConfigError(f"{cfg.source}: grids.t: times up to {cfg.grids.t.max():g} exceed mc.horizon {T:g}")
    ya = yosida_generator(cfg.generator, cfg.simulate_beta)
    x = cfg.simulate_start
    batch = simulate_paths(x, ya, T, cfg.mc.paths, seed, threads)
    header = dict(PATH_FORMAT_HEADER, beta=ya.beta, horizon=T, start=x, seed=seed, n_paths=cfg.mc.paths,
                  cemetery=ya.cemetery_index)
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(min(cfg.simulate_dump, len(batch))):
        p = batch.path(i)
        lines.append(json.dumps({"path": i, "seed": seed, "jump_times": p.jump_times.tolist(),
                                 "states": p.states.tolist()}, sort_keys=True))
    out.text("paths.jsonl", "\n".join(lines) + "\n")
    f = np.append(cfg.yosida_f, 0.0)
    rows = []
    for t in cfg.grids.t:
        est = mc_estimate(f[batch.state_at(float(t))], seed)
        exact = approx_semigroup(ya, float(t), cfg.yosida_f, cfg.tolerances.tail).values[x]
        z = (est.mean - exact) / est.std_error if est.std_error > 0 else 0.0
        rows.append((float(t), est.mean, est.std_error, exact, z))
    out.csv("simulate.csv", ["t", "mc_mean", "std_error", "series_value", "z_score"], rows)
    out.plot("simulate.dat", [r[0] for r in rows], [r[1] for r in rows], "t", "mc_mean")
    jumps = mc_estimate(batch.n_jumps.astype(float), seed)
    return {"jump_mean": jumps.mean, "jump_std_error": jumps.std_error, "beta_T": ya.beta * T}


def run_exit_bound(cfg: ExperimentConfig, out: Bundle, threads: int) -> dict:
    L, sp, tol = cfg.generator, cfg.space, cfg.tolerances
    if cfg.exit_betas.min() < 2:
        raise ConfigError(f"{cfg.source}: grids.beta: exit-bound needs every beta >= 2 (or an exit_bound.beta grid)")
    seq = build_modified_sequence(cfg.set_sequence, L, sp, alpha_grid=E_N_ALPHA_GRID, l_grid=cfg.grids.l,
                                  threshold=tol.threshold, check=False)
    viol = seq.excessivity_violation(L, cfg.grids.alpha)
    if viol > tol.excessive:
        raise InvariantViolation(f"e_hat is not 1-excessive on the alpha grid (violation {viol:.3e})")
    rows, two_rows, failed = [], [], []
    for ib, beta in enumerate(cfg.exit_betas):
        ya = yosida_generator(L, float(beta))
        for k, eh in enumerate(seq.e_hat, start=1):
            chk = check_two_excessive(eh, ya, tol=tol.excessive, tail_tol=tol.tail)
            two_rows.append((k, beta, chk.max_violation, chk.passed))
            if not chk.passed:
                failed.append(f"2-excessivity of e_hat_{k} at beta={beta:g}")
        for x in cfg.probes:
            res = mc_exit_bounds(x, seq.sets, seq.e_hat, ya, cfg.mc.paths, cfg.mc.horizon,
                                 _cell_seed(cfg.mc.seed, ib, x), tol.n_sigma, tol.excessive, threads)
            for k, r in enumerate(res, start=1):
                rows.append((x, k, beta, r.estimate.mean, r.estimate.std_error, r.tail, r.e_hat, r.passed))
                if not r.passed:
                    failed.append(f"exit bound at x={x}, n={k}, beta={beta:g}")
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    out.csv("exit_bound.csv", ["x", "n", "beta", "estimate", "std_error", "tail", "e_hat", "verdict"], rows)
    out.csv("two_excessive.csv", ["n", "beta", "max_violation", "verdict"], two_rows)
    prof = seq.decay_profile()
    out.csv("e_hat_profile.csv", ["n", "size", "capacity", "max_e_hat", "n_exceptional"],
            [(k, int(np.count_nonzero(U)), c, m, int(np.count_nonzero(N)))
             for k, (U, (c, m), N) in enumerate(zip(seq.sets, prof, seq.N), start=1)])
    out.plot("exit_bound.dat", [r[6] for r in rows], [r[3] for r in rows], "e_hat", "estimate")
    if failed:
        raise InvariantViolation(f"{len(failed)} exit-time bound checks failed, first: {failed[0]}")
    return {"cells": len(rows), "excessivity_violation": viol}


def run_report(cfg: ExperimentConfig, out: Bundle, threads: int) -> dict:
    L, sp = cfg.generator, cfg.space
    T = float(cfg.grids.t.max())
    sup = np.zeros(cfg.grids.beta.size)
    for t in cfg.grids.t:
        tab = convergence_table(L, cfg.yosida_f, float(t), cfg.grids.beta, sp)
        sup = np.maximum(sup, tab.sup_errors)
    fam = build_separating_family(sp, L)
    ok, bound, seen = generator_bound_check(L, fam, cfg.grids.beta)
    if not ok:
        raise InvariantViolation("generator bound ||L^beta g_n|| <= ||g_n - u_n|| fails")
    rep = weak_convergence_probe(cfg.simulate_start, L, cfg.grids.beta, cfg.grids.t, fam, cfg.mc.paths,
                                 cfg.mc.seed, threads, cfg.tolerances.n_sigma)
    rows = [(b, s, d, h, e, jm, jx, mo) for b, s, d, h, e, jm, jx, mo in
            zip(rep.betas, sup, rep.discrepancy, rep.ci_halfwidth, rep.exact_gap, rep.jump_mean,
                rep.max_rho_jump, rep.modulus)]
    out.csv("report.csv", ["beta", "semigroup_sup_error", "mc_discrepancy", "ci_halfwidth", "exact_gap",
                           "jump_mean", "max_rho_jump", "modulus"], rows)
    out.plot("report.dat", rep.betas, rep.discrepancy, "beta", "mc_discrepancy")
    out.plot("report_exact.dat", rep.betas, rep.exact_gap, "beta", "exact_gap")
    return {"final_vs_first": rep.final_vs_first(), "horizon": T}


RUNNERS = {
    "capacity": run_capacity,
    "yosida-converge": run_yosida,
    "simulate": run_simulate,
    "exit-bound": run_exit_bound,
    "report": run_report,
}


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="huntapprox", description="Potential theory and Yosida-approximation experiments on finite state spaces.")
    p.add_argument("--version", action="version", version=f"huntapprox {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, summary in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=summary, description=summary)
        sp.add_argument("--config", metavar="PATH", required=name != "selftest",
                        help="experiment config (YAML); 'builtin:NAME' picks a packaged reference config")
        sp.add_argument("--seed", type=int, metavar="N", help="override mc.seed")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads for path blocks")
        sp.add_argument("--tol-scale", type=float, default=1.0, metavar="X",
                        help="multiply all tolerances (exploratory runs only)")
    return p


def builtin_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("huntapprox").joinpath("configs").iterdir() if p.name.endswith(".yaml"))


def _load(ref: str) -> ExperimentConfig:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in builtin_configs():
            raise ConfigError(f"{ref}: unknown builtin config (available: {', '.join(builtin_configs())})")
        text = resources.files("huntapprox").joinpath("configs", f"{name}.yaml").read_text()
        return parse_config(text, source=f"{name}.yaml")
    return load_config(ref)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        if not (math.isfinite(args.tol_scale) and args.tol_scale > 0):
            raise ConfigError("--tol-scale: must be a positive number")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed: must be nonnegative")
        if args.command == "selftest":
            results = run_selftest(verbose=True)
            failed = [r for r in results if not r.passed]
            if args.out:
                b = Bundle(Path(args.out), "selftest")
                b.csv("selftest.csv", ["check", "passed", "detail"], [(r.name, r.passed, r.detail) for r in results])
                b.manifest(None, {}, {})
            print(f"selftest: {len(results) - len(failed)}/{len(results)} checks passed")
            if failed:
                print(f"numerical failure: selftest check '{failed[0].name}' violated", file=sys.stderr)
                return EXIT_NUMERICAL
            return EXIT_OK
        cfg = _load(args.config)
        overrides = {}
        if args.seed is not None:
            cfg = cfg.replace(mc=type(cfg.mc)(cfg.mc.paths, cfg.mc.horizon, args.seed))
            overrides["seed"] = args.seed
        if args.tol_scale != 1.0:
            cfg = cfg.replace(tolerances=cfg.tolerances.scaled(args.tol_scale))
            overrides["tol_scale"] = args.tol_scale
        out_dir = args.out or cfg.output_dir
        if not out_dir:
            raise ConfigError(f"{cfg.source}: output.dir: no output directory (set output.dir or pass --out)")
        bundle = Bundle(Path(out_dir), args.command)
        extra = None
        try:
            extra = RUNNERS[args.command](cfg, bundle, args.threads)
        finally:
            bundle.manifest(cfg, {"mc": cfg.mc.seed, "cell_seeds": "SeedSequence([mc, *cell_key])"}, overrides, extra)
        print(f"{args.command}: wrote {len(bundle.files)} files to {out_dir}")
        if extra:
            print(json.dumps(extra, sort_keys=True, default=float))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
