"""Replicated Monte Carlo experiments: tail quantiles versus the theorem
bounds, convergence-rate fits, and at-scale checks of the structural
identities.

Replicate r of horizon n always draws from the counter-based stream
(base seed, stream id(n, r)), and aggregation folds results in replicate
order, so a report is a pure function of its plan for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .bounds import BoundConstants, compute_Bn, compute_Cn, compute_tn, \
    remainder_bound, theorem_rhs
from .chain import ErgodicityConstants, FiniteChain, ergodicity_constants, \
    simulate_finite_batch, stationary_distribution
from .kernels import KernelFamily, kernel_family, sup_constant_A
from .rng import replicate_stream
from .reporting import render_csv, render_json
from .splitting import block_sums, orlicz_norm_estimate, regeneration_times, \
    split_simulate
from .ustat import FiniteKernelOps, conditional_pair_expectations, \
    martingale_residuals
from .chain import ChainPath


class ExperimentError(ValueError):
    """Invalid or degenerate experiment plan."""


@dataclass(frozen=True)
class ExperimentPlan:
    """One replicated-simulation request.

    ``kernel`` fixes the base kernel and index weights; it is re-horizoned
    per grid point. ``statistic`` selects the pipeline: "tail", "rate",
    "ustat", "decomposition-check", or "block-mean".
    """

    chain: FiniteChain
    kernel: KernelFamily
    statistic: str
    n_grid: Tuple[int, ...]
    replicates: int
    seed: int
    u_grid: Tuple[float, ...] = ()
    centering: str = "joint-expectation"
    initial: str = "stationary"
    kappa: Optional[float] = None  # None: calibrate from the quantiles
    beta: float = 1.0
    quantile_level: float = 0.99
    holdout_u: Optional[float] = None
    threads: int = 1


@dataclass
class ExperimentReport:
    """Deterministic experiment output plus serialization helpers.

    Timing never enters the serialized artifacts; it lives only in
    ``wallclock_s`` so that identical plans yield identical bytes.
    """

    kind: str
    plan_echo: dict
    raw_rows: list = field(default_factory=list)
    quantile_rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    wallclock_s: float = 0.0

    RAW_HEADER = ("n", "replicate", "seed", "value")
    QUANTILE_HEADER = ("n", "u", "level", "quantile",
                       "bound_T1a", "bound_T1b", "bound_T2")

    def raw_csv(self) -> str:
        return render_csv(self.RAW_HEADER, self.raw_rows)

    def quantile_csv(self) -> str:
        return render_csv(self.QUANTILE_HEADER, self.quantile_rows)

    def summary_json(self) -> str:
        return render_json({"kind": self.kind, "plan": self.plan_echo,
                            "summary": self.summary}) + "\n"


def _plan_echo(plan: ExperimentPlan) -> dict:
    return {
        "statistic": plan.statistic,
        "n_grid": list(plan.n_grid),
        "replicates": plan.replicates,
        "u_grid": list(plan.u_grid),
        "seed": plan.seed,
        "centering": plan.centering,
        "initial": plan.initial,
        "kappa": plan.kappa,
        "beta": plan.beta,
        "quantile_level": plan.quantile_level,
        "kernel": plan.kernel.base.describe() | {"weights": plan.kernel.weight.name},
    }


# ---------------------------------------------------------------------------
# replicate machinery
# ---------------------------------------------------------------------------

def replicate_ustat_values(chain: FiniteChain, kernel: KernelFamily, n: int,
                           replicates: int, seed: int, centering: str,
                           initial: str = "stationary", threads: int = 1) -> np.ndarray:
    """Raw-scale centered U-statistic of replicate r, for r = 0..replicates-1.

    Bit-identical to simulating each replicate separately on its own stream;
    the batch step recursion and thread count only change the schedule.
    """
    streams = [replicate_stream(n, r) for r in range(replicates)]
    paths = simulate_finite_batch(chain, n, seed, streams, initial=initial)
    law = stationary_distribution(chain) if initial == "stationary" else chain.initial
    ops = FiniteKernelOps(chain, kernel, law)
    center = ops.total_center(centering)
    values = np.empty(replicates)

    def run_block(block):
        lo, hi = block
        for r in range(lo, hi):
            values[r] = ops.pair_sum(paths[r]) - center

    blocks = _blocks(replicates, threads)
    if len(blocks) == 1:
        run_block(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            list(pool.map(run_block, blocks))
    return values


def _blocks(total: int, threads: int):
    threads = max(1, int(threads))
    if threads == 1 or total < 2 * threads:
        return [(0, total)]
    size = math.ceil(total / threads)
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _fit_loglog_slope(ns: Sequence[int], qs: Sequence[float]) -> Tuple[float, float]:
    """(slope, standard error) of log q against log n by least squares."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(qs, dtype=float))
    m = len(x)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - (y.mean() + slope * xc)
    dof = max(m - 2, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, stderr


# ---------------------------------------------------------------------------
# tail experiment
# ---------------------------------------------------------------------------

def tail_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Empirical tail quantiles of the U-statistic against the bound RHS.

    For each (n, u) the quantile level is 1 - min(1, beta e^{-u} log n);
    cells whose level degenerates to <= 0 are skipped and marked. With no
    supplied kappa, one kappa per variant is calibrated as the smallest
    value covering every fit cell (the held-out u, when given, is excluded
    from the fit and reported separately).
    """
    import time
    t0 = time.perf_counter()
    if plan.statistic != "tail":
        raise ExperimentError(f"plan statistic is {plan.statistic!r}, not 'tail'")
    if plan.replicates < 100:
        raise ExperimentError("tail experiments need at least 100 replicates")
    if not plan.u_grid:
        raise ExperimentError("tail experiments need a u grid")

    report = ExperimentReport(kind="tail", plan_echo=_plan_echo(plan))
    cst = ergodicity_constants(plan.chain)
    cells = []  # (n, u, level, quantile, constants)
    per_n_constants: dict = {}
    nnls_fits = {}

    for n in plan.n_grid:
        kernel = plan.kernel.with_horizon(n)
        values = replicate_ustat_values(plan.chain, kernel, n, plan.replicates,
                                        plan.seed, plan.centering, plan.initial,
                                        plan.threads)
        for r, v in enumerate(values):
            report.raw_rows.append((n, r, plan.seed, v))
        tn, r_rate = compute_tn(cst.rho, n)
        consts = BoundConstants(
            A=float(sup_constant_A(kernel, plan.chain)),
            Bn=compute_Bn(plan.chain, kernel, tn, cst),
            Cn=compute_Cn(plan.chain, kernel, plan.initial == "stationary",
                          constants=cst),
            tn=tn, r=r_rate, kappa=1.0, beta=plan.beta,
            flags={"rho_source": cst.rho_source, "initial": plan.initial})
        per_n_constants[n] = consts

        live_q = []
        for u in plan.u_grid:
            level = 1.0 - min(1.0, plan.beta * math.exp(-u) * math.log(n))
            if level <= 0.0:
                cells.append((n, u, level, None))
                continue
            q = float(np.quantile(values, level))
            cells.append((n, u, level, q))
            live_q.append((u, q))
        if live_q:
            nnls_fits[str(n)] = _nnls_form_fit(live_q)

    if all(c[3] is None for c in cells):
        raise ExperimentError("degenerate quantile level for every (n, u) cell")

    kappas = {}
    for variant in ("T1a", "T1b", "T2"):
        if plan.kappa is not None:
            kappas[variant] = plan.kappa
            continue
        ratios = [q / theorem_rhs(variant, per_n_constants[n], n, u)
                  for (n, u, lvl, q) in cells
                  if q is not None and q > 0 and u != plan.holdout_u]
        kappas[variant] = max(ratios) if ratios else 0.0

    summary_cells = []
    for (n, u, level, q) in cells:
        consts = per_n_constants[n]
        bounds = {}
        for variant in ("T1a", "T1b", "T2"):
            consts_k = BoundConstants(**{**consts.as_dict(),
                                         "kappa": kappas[variant]})
            bounds[variant] = theorem_rhs(variant, consts_k, n, u)
        if q is None:
            report.quantile_rows.append((n, u, level, "skipped",
                                         bounds["T1a"], bounds["T1b"], bounds["T2"]))
            summary_cells.append({"n": n, "u": u, "level": level,
                                  "skipped": True})
        else:
            report.quantile_rows.append((n, u, level, q,
                                         bounds["T1a"], bounds["T1b"], bounds["T2"]))
            ratios = {v: (q / b if b > 0 else 0.0) for v, b in bounds.items()}
            summary_cells.append({"n": n, "u": u, "level": level, "quantile": q,
                                  "ratio_T1a": ratios["T1a"],
                                  "ratio_T1b": ratios["T1b"],
                                  "ratio_T2": ratios["T2"],
                                  "held_out": u == plan.holdout_u})

    report.summary = {
        "kappa": kappas,
        "kappa_source": "supplied" if plan.kappa is not None else "calibrated",
        "beta": plan.beta,
        "beta_source": "supplied",
        "holdout_u": plan.holdout_u,
        "constants": {str(n): c.as_dict() for n, c in per_n_constants.items()},
        "cells": summary_cells,
        "form_fit_nnls": nnls_fits,
    }
    report.wallclock_s = time.perf_counter() - t0
    return report


def _nnls_form_fit(live_q):
    """Nonnegative least squares of quantiles on (sqrt u, u, u^1.5, u^2, 1)."""
    from scipy.optimize import nnls
    us = np.array([u for u, _ in live_q])
    qs = np.array([q for _, q in live_q])
    X = np.column_stack([np.sqrt(us), us, us**1.5, us**2, np.ones_like(us)])
    coef, resid = nnls(X, np.maximum(qs, 0.0))
    return {"coefficients": coef.tolist(), "residual": float(resid)}


# ---------------------------------------------------------------------------
# rate experiment
# ---------------------------------------------------------------------------

def rate_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Fit the decay rate of the pairs-normalized statistic's high quantile.

    Runs the plan's weighted kernel and its unweighted base on the same
    chain and replicate streams, fits log-quantile against log-horizon, and
    reports both slopes with standard errors plus their separation.
    """
    import time
    t0 = time.perf_counter()
    if plan.statistic != "rate":
        raise ExperimentError(f"plan statistic is {plan.statistic!r}, not 'rate'")
    if len(plan.n_grid) < 3:
        raise ExperimentError("rate fits need at least 3 horizons")

    report = ExperimentReport(kind="rate", plan_echo=_plan_echo(plan))
    variants = {
        "unweighted": kernel_family(plan.kernel.base, max(plan.n_grid)),
        "weighted": plan.kernel,
    }
    slopes = {}
    for name, proto in variants.items():
        qs = []
        for n in plan.n_grid:
            kernel = proto.with_horizon(n)
            values = replicate_ustat_values(plan.chain, kernel, n,
                                            plan.replicates, plan.seed,
                                            plan.centering, plan.initial,
                                            plan.threads)
            norm = np.abs(values) * 2.0 / (n * (n - 1))
            q = float(np.quantile(norm, plan.quantile_level))
            if q <= 0.0:
                raise ExperimentError(
                    f"degenerate {plan.quantile_level} quantile (zero statistic) "
                    f"for {name} kernel at n={n}")
            qs.append(q)
            for r, v in enumerate(norm):
                report.raw_rows.append((n, r, plan.seed, v))
        slope, stderr = _fit_loglog_slope(plan.n_grid, qs)
        slopes[name] = {"slope": slope, "stderr": stderr,
                        "quantiles": {str(n): q for n, q in zip(plan.n_grid, qs)}}

    separation = slopes["unweighted"]["slope"] - slopes["weighted"]["slope"]
    report.summary = {
        "quantile_level": plan.quantile_level,
        "slopes": slopes,
        "separation": separation,
        "weighted_below_unweighted": slopes["weighted"]["slope"] < slopes["unweighted"]["slope"],
    }
    report.wallclock_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------

def identity_suite(chain: FiniteChain, kernel: KernelFamily, n: int, t_n: int,
                   replicates: int, seed: int, initial: str = "stationary",
                   L: float = 1.0) -> ExperimentReport:
    """Replicated exact checks of the decomposition and martingale structure.

    Reports the worst relative telescoping residual |M + R - U| / (1 + |U|),
    the worst one-step martingale residual, and the realized remainder |R|
    against its deterministic bounds (both variants).
    """
    import time
    t0 = time.perf_counter()
    if not (1 <= t_n <= n):
        raise ExperimentError(f"t_n must lie in [1, {n}]")
    law = stationary_distribution(chain) if initial == "stationary" else chain.initial
    streams = [replicate_stream(n, r) for r in range(replicates)]
    paths = simulate_finite_batch(chain, n, seed, streams, initial=initial)
    kernel = kernel.with_horizon(n)
    ops = FiniteKernelOps(chain, kernel, law)
    i0, j0 = np.triu_indices(n, k=1)
    centers = ops.joint_centers()[i0, j0]
    A = float(sup_constant_A(kernel, chain))
    bound = remainder_bound("stationary" if initial == "stationary" else "general",
                            A, L, n, t_n)

    report = ExperimentReport(kind="identity", plan_echo={
        "n": n, "t_n": t_n, "replicates": replicates, "seed": seed,
        "initial": initial, "kernel": kernel.base.describe() | {
            "weights": kernel.weight.name}})
    max_rel = 0.0
    max_mart = 0.0
    max_R = 0.0
    for r in range(replicates):
        values = paths[r]
        CE = conditional_pair_expectations(ops, values, t_n)
        M = float((CE[:, 0] - CE[:, t_n]).sum())
        R = float((CE[:, t_n] - centers).sum())
        U = float((CE[:, 0] - centers).sum())
        rel = abs(M + R - U) / (1.0 + abs(U))
        max_rel = max(max_rel, rel)
        max_R = max(max_R, abs(R))
        path = ChainPath(values=values, seed=seed, stream=streams[r],
                         model=chain, initial_spec=initial, initial_law=law)
        max_mart = max(max_mart, float(martingale_residuals(chain, path, kernel).max()))
        report.raw_rows.append((n, r, seed, rel))

    report.summary = {
        "max_decomposition_residual": max_rel,
        "max_martingale_residual": max_mart,
        "max_realized_R": max_R,
        "remainder_bound": bound,
        "remainder_variant": "stationary" if initial == "stationary" else "general",
        "remainder_ok": max_R <= bound,
        "decomposition_ok": max_rel <= 1e-9,
        "martingale_ok": max_mart <= 1e-10,
        "A": A, "L": L, "t_n": t_n,
    }
    report.summary["ok"] = bool(report.summary["decomposition_ok"]
                                and report.summary["martingale_ok"]
                                and report.summary["remainder_ok"])
    report.wallclock_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# regeneration suite
# ---------------------------------------------------------------------------

def regeneration_suite(chain: FiniteChain, constants: ErgodicityConstants,
                       steps: int, seed: int,
                       f: Optional[np.ndarray] = None) -> ExperimentReport:
    """Split-chain diagnostics: block-mean identity and regeneration tails.

    Checks the renewal identity mean(Z_i) ~ (1/delta_1) * pi(f) within three
    standard errors, the geometric mean gap 1/delta_1, and that the psi_1
    norm estimate brackets and converges.
    """
    import time
    t0 = time.perf_counter()
    fvec = np.zeros(chain.n_states)
    if f is None:
        fvec[0] = 1.0
    else:
        fvec = np.asarray(f, dtype=float)
    trace = split_simulate(chain, constants, steps, seed)
    times = regeneration_times(trace)
    z = block_sums(trace, fvec)
    pi_f = float(constants.pi @ fvec)
    target = pi_f / constants.delta_m

    z_mean = float(z.mean())
    z_se = float(z.std(ddof=1) / math.sqrt(len(z)))
    later = times[1:].astype(float)  # T_2, T_3, ... are i.i.d. geometric
    t_mean = float(later.mean())
    t_se = float(later.std(ddof=1) / math.sqrt(len(later)))
    orlicz = orlicz_norm_estimate(later)

    report = ExperimentReport(kind="regeneration", plan_echo={
        "steps": steps, "seed": seed, "delta1": constants.delta_m,
        "f": fvec.tolist()})
    report.summary = {
        "n_regenerations": int(len(times)),
        "n_blocks": int(len(z)),
        "block_mean": z_mean,
        "block_mean_se": z_se,
        "block_mean_target": target,
        "block_mean_ok": abs(z_mean - target) <= 3.0 * z_se,
        "mean_T": t_mean,
        "mean_T_se": t_se,
        "mean_T_target": 1.0 / constants.delta_m,
        "mean_T_ok": abs(t_mean - 1.0 / constants.delta_m) <= 3.0 * t_se,
        "tau_hat": orlicz.tau_hat,
        "tau_bracket": list(orlicz.bracket),
        "tau_sample_size": orlicz.sample_size,
    }
    report.summary["ok"] = bool(report.summary["block_mean_ok"]
                                and report.summary["mean_T_ok"])
    report.wallclock_s = time.perf_counter() - t0
    return report
