"""Command-line entry point.

Wires TOML configs to the library operations with reproducible outputs:
every command that writes files also echoes its fully resolved
configuration (defaults filled, seed, artifact version) into the output
directory, and re-running from that directory reproduces every byte.

Exit codes: 0 success, 1 validation error (single-line ``error: ...`` on
stderr), 2 identity-verification failure in ``verify``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import BoundConstants, compute_Bn, compute_Cn, compute_tn, theorem_rhs
from .chain import ARCHModel, AR1Model, FiniteChain, arch_envelopes, \
    ergodicity_constants, simulate
from .config import ConfigError, build_kernel, build_model, kernel_spec_echo, \
    load_config, model_spec_echo
from .experiments import ExperimentError, ExperimentPlan, identity_suite, \
    rate_experiment, regeneration_suite, tail_experiment
from .kernels import sup_constant_A
from .reporting import fmt, render_csv, render_json
from .splitting import SplitError, orlicz_norm_estimate, split_simulate
from .ustat import martingale_decomposition, tau_ap, tau_kendall, u_stat, \
    wilcoxon_weighted


class CliError(Exception):
    pass


class VerifyFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through CliError instead
    def error(self, message):
        raise CliError(message)


def _parse_floats(text: str):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise CliError(f"expected a comma-separated number list, got {text!r}")


def _parse_ints(text: str):
    return [int(v) for v in _parse_floats(text)]


def _write(out_dir: Optional[str], name: str, text: str):
    if out_dir is None:
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)


def _echo_config(out_dir, command: str, cfg: dict, params: dict):
    doc = {
        "artifact": {"name": "ustatlab", "version": __version__},
        "command": command,
        "config": {
            "model": model_spec_echo(cfg.get("model", {})),
            "kernel": kernel_spec_echo(cfg.get("kernel")),
        },
        "parameters": params,
    }
    _write(out_dir, "resolved_config.json", render_json(doc) + "\n")


def _need_model(cfg: dict):
    if "model" not in cfg:
        raise CliError("config has no [model] table")
    return build_model(cfg["model"])


def _need_kernel(cfg: dict, n: int):
    if "kernel" not in cfg:
        raise CliError("config has no [kernel] table")
    return build_kernel(cfg["kernel"], n)


def _state_text(model, value) -> str:
    if isinstance(model, FiniteChain):
        return model.states[int(value)]
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    return ";".join(fmt(v) for v in arr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    path = simulate(model, args.n, args.seed, initial=args.initial,
                    stream=args.stream)
    rows = [(t + 1, _state_text(model, v)) for t, v in enumerate(path.values)]
    csv = render_csv(("step", "state"), rows)
    _echo_config(args.out, "simulate", cfg,
                 {"n": args.n, "seed": args.seed, "stream": args.stream,
                  "initial": args.initial, "path_meta": path.meta})
    _write(args.out, "path.csv", csv)
    if args.out is None:
        sys.stdout.write(csv)
    return 0


def _cmd_constants(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if isinstance(model, FiniteChain):
        cst = ergodicity_constants(model)
        doc = {"kind": "finite", "pi": cst.pi, "rho": cst.rho, "L": cst.L,
               "lambda": cst.lam, "delta_m": cst.delta_m, "mu": cst.mu,
               "delta_M": cst.delta_M, "nu": cst.nu, "t_mix": cst.t_mix,
               "m": cst.m, "rho_source": cst.rho_source}
    elif isinstance(model, ARCHModel):
        env = arch_envelopes(model)
        doc = {"kind": "arch", "delta_m": env.delta_m, "delta_M": env.delta_M,
               "a": model.a, "b": model.b, "c": model.c, "sigma": model.sigma}
    else:
        raise CliError("constants supports finite and arch models; the AR(1) "
                       "majorization has no implemented closed form")
    text = render_json(doc) + "\n"
    sys.stdout.write(text)
    _echo_config(args.out, "constants", cfg, {})
    _write(args.out, "constants.json", text)
    return 0


def _cmd_ustat(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    kernel = _need_kernel(cfg, args.n)
    path = simulate(model, args.n, args.seed, initial=args.initial,
                    stream=args.stream)
    res = u_stat(path, kernel, centering=args.centering,
                 normalization=args.normalization, mc_budget=args.mc_budget)
    csv = render_csv(("statistic", "n", "seed", "centering", "value", "stderr"),
                     [("ustat", args.n, args.seed, args.centering, res.value,
                       res.stderr)])
    sys.stdout.write(csv)
    _echo_config(args.out, "ustat", cfg,
                 {"n": args.n, "seed": args.seed, "stream": args.stream,
                  "initial": args.initial, "centering": args.centering,
                  "normalization": args.normalization,
                  "mc_budget": args.mc_budget})
    _write(args.out, "statistics.csv", csv)
    return 0


def _cmd_decompose(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("decompose needs a finite chain")
    kernel = _need_kernel(cfg, args.n)
    if args.tn is not None:
        t_n, r = args.tn, None
    else:
        cst = ergodicity_constants(model)
        t_n, r = compute_tn(cst.rho, args.n, args.r)
    path = simulate(model, args.n, args.seed, initial=args.initial,
                    stream=args.stream)
    dec = martingale_decomposition(model, path, kernel, t_n)
    doc = {"n": args.n, "t_n": dec.t_n, "r": r, "M": dec.M, "R": dec.R,
           "u_stat_centered": dec.u_centered,
           "residual": dec.M + dec.R - dec.u_centered,
           "per_level": dec.per_level}
    text = render_json(doc) + "\n"
    sys.stdout.write(text)
    _echo_config(args.out, "decompose", cfg,
                 {"n": args.n, "seed": args.seed, "stream": args.stream,
                  "initial": args.initial, "t_n": dec.t_n})
    _write(args.out, "decomposition.json", text)
    return 0


def _cmd_bounds(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("bounds needs a finite chain")
    kernel = _need_kernel(cfg, args.n)
    cst = ergodicity_constants(model)
    rho = args.rho if args.rho is not None else cst.rho
    rho_source = "user" if args.rho is not None else cst.rho_source
    t_n, r = (args.tn, args.r) if args.tn is not None else compute_tn(rho, args.n, args.r)
    stationary = args.initial == "stationary"
    consts = BoundConstants(
        A=float(sup_constant_A(kernel, model)),
        Bn=compute_Bn(model, kernel, t_n, cst),
        Cn=compute_Cn(model, kernel, stationary, constants=cst),
        tn=t_n, r=r if r is not None else 0.0,
        kappa=args.kappa, beta=args.beta,
        method="exact-enumeration",
        flags={"rho": rho, "rho_source": rho_source, "L": cst.L,
               "initial": args.initial, "depends_on_i": kernel.depends_on_i})
    doc = consts.as_dict()
    text = render_json(doc) + "\n"
    sys.stdout.write(text)
    rows = []
    for u in (args.u or []):
        rows.append((u,
                     theorem_rhs("T1a", consts, args.n, u),
                     theorem_rhs("T1b", consts, args.n, u),
                     theorem_rhs("T2", consts, args.n, u),
                     theorem_rhs("Eq3", consts, args.n, u)))
    _echo_config(args.out, "bounds", cfg,
                 {"n": args.n, "t_n": t_n, "r": r, "kappa": args.kappa,
                  "beta": args.beta, "initial": args.initial, "u": args.u or []})
    _write(args.out, "bound_constants.json", text)
    if rows:
        csv = render_csv(("u", "bound_T1a", "bound_T1b", "bound_T2", "bound_Eq3"),
                         rows)
        sys.stdout.write(csv)
        _write(args.out, "theorem_rhs.csv", csv)
    return 0


def _cmd_split(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("split needs a finite chain")
    cst = ergodicity_constants(model)
    trace = split_simulate(model, cst, args.n, args.seed, stream=args.stream)
    rows = [(t + 1, model.states[int(s)], int(b))
            for t, (s, b) in enumerate(zip(trace.path, trace.bells))]
    csv = render_csv(("step", "state", "bell"), rows)
    times = trace.regen_times
    tau_hat = None
    if len(times) > 1:
        later = times[1:].astype(float)
        try:
            tau_hat = orlicz_norm_estimate(later).tau_hat
        except SplitError:
            tau_hat = None
    doc = {"delta1": trace.delta1, "n_regen": int(len(times)),
           "mean_T": float(np.mean(times[1:])) if len(times) > 1 else None,
           "tau_hat": tau_hat}
    text = render_json(doc) + "\n"
    sys.stdout.write(text)
    _echo_config(args.out, "split", cfg,
                 {"n": args.n, "seed": args.seed, "stream": args.stream})
    _write(args.out, "trace.csv", csv)
    _write(args.out, "regeneration.json", text)
    return 0


def _cmd_stats(args):
    if args.stat == "tau-kendall":
        ranks = _parse_floats(args.ranks)
        value, n = tau_kendall(ranks), len(ranks)
    elif args.stat == "tau-ap":
        ranks = _parse_floats(args.ranks)
        value, n = tau_ap(ranks), len(ranks)
    else:
        s0, s1 = _parse_floats(args.sample0), _parse_floats(args.sample1)
        w0 = _parse_floats(args.weights0) if args.weights0 else None
        w1 = _parse_floats(args.weights1) if args.weights1 else None
        value, n = wilcoxon_weighted(s0, s1, w0, w1), len(s0) + len(s1)
    csv = render_csv(("statistic", "n", "seed", "centering", "value", "stderr"),
                     [(args.stat, n, "", "none", value, 0.0)])
    sys.stdout.write(csv)
    _write(args.out, "statistics.csv", csv)
    if args.out is not None:
        doc = {"artifact": {"name": "ustatlab", "version": __version__},
               "command": f"stats {args.stat}",
               "parameters": {k: getattr(args, k, None)
                              for k in ("ranks", "sample0", "sample1",
                                        "weights0", "weights1")}}
        _write(args.out, "resolved_config.json", render_json(doc) + "\n")
    return 0


def _cmd_verify(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("verify needs a finite chain")
    kernel = _need_kernel(cfg, args.n)
    cst = ergodicity_constants(model)
    t_n, r = (args.tn, None) if args.tn is not None else compute_tn(cst.rho, args.n)
    ident = identity_suite(model, kernel, args.n, t_n, args.replicates,
                           args.seed, initial=args.initial)
    regen = regeneration_suite(model, cst, args.steps, args.seed)
    doc = {"identity": ident.summary, "regeneration": regen.summary}
    text = render_json(doc) + "\n"
    sys.stdout.write(text)
    _echo_config(args.out, "verify", cfg,
                 {"n": args.n, "replicates": args.replicates, "seed": args.seed,
                  "t_n": t_n, "steps": args.steps, "initial": args.initial})
    _write(args.out, "verify.json", text)
    if not (ident.summary["ok"] and regen.summary["ok"]):
        failed = [k for k, rep in (("identity", ident), ("regeneration", regen))
                  if not rep.summary["ok"]]
        raise VerifyFailure(f"tolerance breach in: {','.join(failed)}")
    return 0


def _make_plan(args, model, kernel, statistic) -> ExperimentPlan:
    return ExperimentPlan(
        chain=model, kernel=kernel, statistic=statistic,
        n_grid=tuple(args.n_grid), replicates=args.replicates, seed=args.seed,
        u_grid=tuple(getattr(args, "u_grid", ()) or ()),
        centering=args.centering, initial=args.initial,
        kappa=getattr(args, "kappa", None), beta=getattr(args, "beta", 1.0),
        quantile_level=getattr(args, "quantile", 0.99),
        holdout_u=getattr(args, "holdout_u", None),
        threads=args.threads)


def _write_experiment(args, cfg, report, params):
    _echo_config(args.out, report.kind, cfg, params)
    _write(args.out, "raw.csv", report.raw_csv())
    if report.quantile_rows:
        _write(args.out, "quantiles.csv", report.quantile_csv())
    _write(args.out, "summary.json", report.summary_json())
    sys.stdout.write(report.summary_json())
    if args.out is not None:
        sys.stderr.write(f"[ustatlab] {report.kind} finished in "
                         f"{report.wallclock_s:.2f}s\n")


def _cmd_rate(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("rate experiments need a finite chain")
    if cfg.get("kernel", {}).get("kind") != "weighted":
        raise CliError("rate experiments need a weighted kernel config "
                       "(kind = \"weighted\")")
    kernel = _need_kernel(cfg, max(args.n_grid))
    plan = _make_plan(args, model, kernel, "rate")
    report = rate_experiment(plan)
    _write_experiment(args, cfg, report,
                      {"n_grid": args.n_grid, "replicates": args.replicates,
                       "seed": args.seed, "quantile": args.quantile,
                       "centering": args.centering, "initial": args.initial,
                       "threads_note": "results are thread-count independent"})
    return 0


def _cmd_tail(args):
    cfg = load_config(args.config)
    model = _need_model(cfg)
    if not isinstance(model, FiniteChain):
        raise CliError("tail experiments need a finite chain")
    kernel = _need_kernel(cfg, max(args.n_grid))
    plan = _make_plan(args, model, kernel, "tail")
    report = tail_experiment(plan)
    _write_experiment(args, cfg, report,
                      {"n_grid": args.n_grid, "u_grid": args.u_grid,
                       "replicates": args.replicates, "seed": args.seed,
                       "kappa": args.kappa, "beta": args.beta,
                       "holdout_u": args.holdout_u,
                       "centering": args.centering, "initial": args.initial,
                       "threads_note": "results are thread-count independent"})
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def _add_common(p, kernel_cmd=False):
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--out", default=None, help="output directory (optional)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    p.add_argument("--stream", type=int, default=0,
                   help="RNG stream id (default 0)")
    p.add_argument("--initial", default="stationary",
                   help="initial law: stationary | model (default stationary)")
    if kernel_cmd:
        p.add_argument("--centering", default="pi-expectation",
                       choices=["joint-expectation", "pi-expectation", "none"],
                       help="U-statistic centering (default pi-expectation)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ustatlab",
                     description="U-statistic concentration lab for uniformly "
                                 "ergodic Markov chains")
    parser.add_argument("--version", action="version",
                        version=f"ustatlab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="path length")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("constants", help="ergodicity and Doeblin constants")
    _add_common(p)
    p.set_defaults(func=_cmd_constants)

    p = sub.add_parser("ustat", help="evaluate the U-statistic on one path")
    _add_common(p, kernel_cmd=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--normalization", default="raw", choices=["raw", "pairs"])
    p.add_argument("--mc-budget", type=int, default=None, dest="mc_budget",
                   help="Monte Carlo budget for continuous-model centering")
    p.set_defaults(func=_cmd_ustat)

    p = sub.add_parser("decompose", help="martingale + remainder decomposition")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tn", type=int, default=None, help="depth override")
    p.add_argument("--r", type=float, default=None, help="depth rate override")
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("bounds", help="A, B_n, C_n, t_n and theorem RHS table")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tn", type=int, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--rho", type=float, default=None,
                   help="user-supplied contraction rate (default Dobrushin)")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--u", type=_parse_floats, default=None,
                   help="comma-separated u grid for the RHS table")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("split", help="simulate the order-1 split chain")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("stats", help="rank statistics")
    stats_sub = p.add_subparsers(dest="stat", metavar="STAT")
    for name in ("tau-kendall", "tau-ap"):
        q = stats_sub.add_parser(name)
        q.add_argument("--ranks", required=True, help="comma-separated ranks")
        q.add_argument("--out", default=None)
        q.set_defaults(func=_cmd_stats, stat=name)
    q = stats_sub.add_parser("wilcoxon")
    q.add_argument("--sample0", required=True)
    q.add_argument("--sample1", required=True)
    q.add_argument("--weights0", default=None)
    q.add_argument("--weights1", default=None)
    q.add_argument("--out", default=None)
    q.set_defaults(func=_cmd_stats, stat="wilcoxon")

    p = sub.add_parser("verify", help="identity suite + regeneration suite")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--tn", type=int, default=None)
    p.add_argument("--steps", type=int, default=20_000,
                   help="split-chain steps for the regeneration suite")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("rate", help="convergence-rate experiment")
    _add_common(p, kernel_cmd=True)
    p.add_argument("--n-grid", type=_parse_ints, required=True, dest="n_grid")
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--quantile", type=float, default=0.99)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_rate, centering="joint-expectation")

    p = sub.add_parser("tail", help="tail-quantile experiment")
    _add_common(p, kernel_cmd=True)
    p.add_argument("--n-grid", type=_parse_ints, required=True, dest="n_grid")
    p.add_argument("--u-grid", type=_parse_floats, required=True, dest="u_grid")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--kappa", type=float, default=None,
                   help="supplied kappa (default: calibrate)")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--holdout-u", type=float, default=None, dest="holdout_u")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_tail, centering="joint-expectation")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise CliError("missing subcommand; see --help")
        return args.func(args)
    except VerifyFailure as exc:
        sys.stderr.write(f"verify-failure: {exc}\n")
        return 2
    except (CliError, ConfigError, ExperimentError, SplitError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
