"""Order-1 Nummelin splitting: regeneration bells, blocks, and the
sub-exponential tail of the regeneration time.

The split trajectory draws a Bernoulli(delta_1) bell before each transition;
on a bell the next state regenerates from the minorization law mu, otherwise
it moves by the residual kernel (P - delta_1 mu) / (1 - delta_1). The mixture
reconstructs P exactly, the bells are exogenous, the gaps between bells are
i.i.d. geometric, and the trajectory between bells forms independent blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .chain import ErgodicityConstants, FiniteChain, _sample_categorical
from .rng import philox_generator


class SplitError(ValueError):
    """Invalid split-chain request."""


@dataclass(frozen=True)
class SplitTrace:
    """Split trajectory with its bells, regeneration gaps, and block ranges.

    ``blocks`` holds 0-based half-open [start, stop) ranges into ``path``;
    block i starts right after bell i, so its first state is a fresh draw
    from mu and the blocks are mutually independent.
    """

    path: np.ndarray
    bells: np.ndarray
    regen_times: np.ndarray
    blocks: List[Tuple[int, int]]
    seed: int
    stream: int
    delta1: float
    mu: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OrliczEstimate:
    """Plug-in estimate of the psi_1 norm with its bisection bracket."""

    tau_hat: float
    sample_size: int
    bracket: Tuple[float, float]


def residual_kernel(chain: FiniteChain, delta1: float, mu: np.ndarray) -> np.ndarray:
    """(P - delta_1 mu) / (1 - delta_1), the between-bell transition law."""
    if not (0.0 < delta1 <= 1.0):
        raise SplitError(f"delta_1 must lie in (0, 1], got {delta1}")
    if delta1 == 1.0:
        return np.tile(mu, (chain.n_states, 1))
    resid = chain.P - delta1 * mu[None, :]
    if np.any(resid < -1e-12):
        raise SplitError("residual kernel has a negative entry; the supplied "
                         "(delta_1, mu) is not a valid minorization of P")
    resid = np.clip(resid, 0.0, None) / (1.0 - delta1)
    return resid


def split_simulate(chain: FiniteChain, constants: ErgodicityConstants, n: int,
                   seed: int, stream: int = 0, initial="model") -> SplitTrace:
    """Simulate n steps of the order-1 split chain.

    Marginally the state sequence follows P exactly (algebraic identity of
    the bell mixture), and the bells are i.i.d. Bernoulli(delta_1)
    independent of the states. Bells are drawn from step 1 on, so the first
    regeneration time is the index of the first bell.
    """
    if n < 2:
        raise SplitError(f"need n >= 2, got {n}")
    delta1 = constants.delta_m
    mu = np.asarray(constants.mu, dtype=float)
    resid = residual_kernel(chain, delta1, mu)

    gen = philox_generator(seed, stream)
    uniforms = gen.random((n, 2))  # column 0: bell, column 1: state draw

    if isinstance(initial, str) and initial == "stationary":
        from .chain import stationary_distribution
        law = stationary_distribution(chain)
    elif isinstance(initial, str) and initial == "model":
        law = chain.initial
    else:
        law = np.asarray(initial, dtype=float)

    cum_mu = np.cumsum(mu)
    cum_resid = np.cumsum(resid, axis=1)
    cum_init = np.cumsum(law)

    path = np.empty(n, dtype=np.int64)
    path[0] = _sample_categorical(cum_init, uniforms[0, 1])
    bells = (uniforms[:, 0] < delta1).astype(np.int8)
    for t in range(1, n):
        if bells[t - 1]:
            path[t] = _sample_categorical(cum_mu, uniforms[t, 1])
        else:
            path[t] = _sample_categorical(cum_resid[path[t - 1]], uniforms[t, 1])

    bell_times = np.nonzero(bells)[0] + 1  # 1-based times of bell rings
    regen = np.diff(np.concatenate([[0], bell_times])) if bell_times.size else np.array([], dtype=int)
    blocks = [(int(bell_times[i]), int(bell_times[i + 1]))
              for i in range(len(bell_times) - 1)]
    return SplitTrace(path=path, bells=bells, regen_times=regen.astype(np.int64),
                      blocks=blocks, seed=seed, stream=stream, delta1=delta1,
                      mu=mu, meta={"initial": initial})


def regeneration_times(trace: SplitTrace) -> np.ndarray:
    """Gaps T_1, T_2, ... between successive bell rings.

    T_1 counts from the start of the trace. In the order-1 construction the
    later gaps are i.i.d. geometric(delta_1) with mean 1/delta_1.
    """
    if trace.regen_times.size == 0:
        raise SplitError("no bell rang in the trace; simulate a longer split "
                         "trajectory (mean gap is 1/delta_1)")
    return trace.regen_times


def orlicz_norm_estimate(samples: Sequence, min_samples: int = 1000,
                         rel_tol: float = 1e-8) -> OrliczEstimate:
    """Smallest gamma with sample mean of exp(|T|/gamma) - 1 at most 1.

    The empirical exponential-moment functional is decreasing in gamma, so
    the root is found by bisection inside [max/50, 50 max]; an error is
    raised when the bracket does not straddle the root.
    """
    t = np.abs(np.asarray(samples, dtype=float))
    if t.size < min_samples:
        raise SplitError(f"need at least {min_samples} samples, got {t.size}")
    top = float(t.max())
    if top <= 0:
        raise SplitError("samples are identically zero")
    lo, hi = top / 50.0, 50.0 * top

    def excess(gamma: float) -> float:
        return float(np.mean(np.expm1(t / gamma))) - 1.0

    if excess(lo) < 0 or excess(hi) > 0:
        raise SplitError(
            f"psi_1 bracket not found in [{lo:.6g}, {hi:.6g}]")
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return OrliczEstimate(tau_hat=hi, sample_size=int(t.size),
                          bracket=(top / 50.0, 50.0 * top))


def block_sums(trace: SplitTrace, f: Union[np.ndarray, Callable]) -> np.ndarray:
    """Per-block sums Z_i = sum of f over block i, complete blocks only.

    With m = 1 the blocks are independent and E[Z_i] = (1/delta_1) * the
    invariant-law mean of f; use :func:`block_mean_estimate` for the
    estimator with its standard error.
    """
    if len(trace.blocks) < 2:
        raise SplitError(f"need at least 2 complete blocks, got {len(trace.blocks)}")
    if callable(f):
        fvals = np.asarray([f(x) for x in trace.path], dtype=float)
    else:
        f = np.asarray(f, dtype=float)
        fvals = f[trace.path]
    csum = np.concatenate([[0.0], np.cumsum(fvals)])
    return np.array([csum[stop] - csum[start] for start, stop in trace.blocks])


def block_mean_estimate(trace: SplitTrace, f) -> Tuple[float, float]:
    """(mean of Z_i, standard error) over complete blocks."""
    z = block_sums(trace, f)
    return float(z.mean()), float(z.std(ddof=1) / math.sqrt(len(z)))
