"""Weighted U-statistics, their martingale/remainder decomposition, and the
applied rank statistics (Kendall tau, average-precision correlation, weighted
rank-sum).

The decomposition peels the pair sum into t_n martingale levels plus a
remainder by conditioning each summand on successively earlier prefixes of
the trajectory. On finite chains every conditional expectation is computed
exactly from transition-matrix powers, which turns the telescoping identity
U = M + R into a machine-checkable fact rather than a statistical claim.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .chain import ChainPath, FiniteChain
from .kernels import KernelFamily


class UStatError(ValueError):
    """Invalid U-statistic request."""


@dataclass(frozen=True)
class UStatResult:
    """One evaluated U-statistic.

    ``value`` is on the requested scale; the pairs-normalized scale is the
    raw pair sum times 2/(n(n-1)).
    """

    value: float
    centering: str
    n: int
    normalization: str
    stderr: float = 0.0

    @property
    def raw(self) -> float:
        if self.normalization == "raw":
            return self.value
        return self.value * self.n * (self.n - 1) / 2.0

    @property
    def pairs_normalized(self) -> float:
        if self.normalization == "pairs":
            return self.value
        return self.value * 2.0 / (self.n * (self.n - 1))


@dataclass(frozen=True)
class DecompositionResult:
    """Martingale part M (t_n levels), remainder R, and per-level contributions.

    M + R equals the jointly centered U-statistic to machine precision.
    """

    M: float
    R: float
    t_n: int
    per_level: np.ndarray
    u_centered: float


# ---------------------------------------------------------------------------
# finite-chain precomputations shared by evaluation and decomposition
# ---------------------------------------------------------------------------

class FiniteKernelOps:
    """Cached matrix-power machinery for one (chain, kernel, initial law) triple.

    Exposes the per-pair weight block, the base table, marginal laws of each
    X_i, and the per-gap vectors w_g(x) = E[h(x, X_{t+g}) | X_t = x].
    """

    def __init__(self, chain: FiniteChain, kernel: KernelFamily,
                 initial_law: Optional[np.ndarray] = None):
        if kernel.n < 2:
            raise UStatError("kernel horizon must be >= 2")
        self.chain = chain
        self.kernel = kernel
        self.n = kernel.n
        self.P = chain.P
        self.H = kernel.base_table(chain)
        self.W = kernel.weight_matrix()[1:, 1:]  # 0-based (n x n) block, i < j
        self.chi = np.asarray(chain.initial if initial_law is None else initial_law,
                              dtype=float)
        self._powers = [np.eye(chain.n_states)]
        self._wg: dict[int, np.ndarray] = {}
        self._laws: Optional[np.ndarray] = None
        self._mk: dict[int, np.ndarray] = {}

    def power(self, g: int) -> np.ndarray:
        while len(self._powers) <= g:
            self._powers.append(self._powers[-1] @ self.P)
        return self._powers[g]

    def w_gap(self, g: int) -> np.ndarray:
        """w_g(x) = sum_y P^g(x, y) h(x, y)."""
        if g not in self._wg:
            self._wg[g] = (self.power(g) * self.H).sum(axis=1)
        return self._wg[g]

    def m_level(self, k: int) -> np.ndarray:
        """M_k(x, z) = E[h(x, X_{t+k}) | X_t = z] = (H P^k^T)(x, z)."""
        if k not in self._mk:
            self._mk[k] = self.H @ self.power(k).T
        return self._mk[k]

    def laws(self) -> np.ndarray:
        """Row i-1 is the law of X_i, i.e. chi P^{i-1}."""
        if self._laws is None:
            out = np.empty((self.n, len(self.chi)))
            out[0] = self.chi
            for i in range(1, self.n):
                out[i] = out[i - 1] @ self.P
            self._laws = out
        return self._laws

    def joint_centers(self) -> np.ndarray:
        """E[h_{i,j}(X_i, X_j)] per pair, as an (n x n) upper-triangular array."""
        n = self.n
        laws = self.laws()
        C = np.zeros((n, n))
        for g in range(1, n):
            wg = self.w_gap(g)
            i_idx = np.arange(0, n - g)
            C[i_idx, i_idx + g] = laws[i_idx] @ wg
        return self.W * C

    def total_center(self, centering: str) -> float:
        if centering == "none":
            return 0.0
        if centering == "pi-expectation":
            from .chain import stationary_distribution
            pi = stationary_distribution(self.chain)
            e_base = float(pi @ self.H @ pi)
            return e_base * float(self.W.sum())
        if centering == "joint-expectation":
            return float(self.joint_centers().sum())
        raise UStatError(f"unknown centering {centering!r}")

    def pair_sum(self, values: np.ndarray) -> float:
        """sum_{i<j} a_{i,j} h(X_i, X_j), uncentered."""
        v = np.asarray(values, dtype=np.int64)
        return float((self.W * self.H[v[:, None], v[None, :]]).sum())


def u_stat(path: ChainPath, kernel: KernelFamily, centering: str = "pi-expectation",
           normalization: str = "raw", mc_budget: Optional[int] = None,
           mc_seed: int = 0) -> UStatResult:
    """Evaluate sum_{i<j} (h_{i,j}(X_i, X_j) - center_{i,j}).

    Centering is exact on finite chains ("pi-expectation" integrates the base
    against the invariant law, "joint-expectation" against the exact laws of
    (X_i, X_j) given the path's initial distribution). On AR(1)/ARCH paths,
    centering other than "none" requires a Monte Carlo budget and the result
    carries the plug-in standard error.
    """
    n = len(path)
    if kernel.n != n:
        raise UStatError(f"kernel horizon {kernel.n} != path length {n}")
    if normalization not in ("raw", "pairs"):
        raise UStatError(f"unknown normalization {normalization!r}")

    if isinstance(path.model, FiniteChain):
        ops = FiniteKernelOps(path.model, kernel, path.initial_law)
        raw = ops.pair_sum(path.values) - ops.total_center(centering)
        stderr = 0.0
    else:
        W = kernel.weight_matrix()[1:, 1:]
        raw = float((W * kernel.base.pair_matrix(path.values)).sum())
        stderr = 0.0
        if centering != "none":
            if not mc_budget:
                raise UStatError(
                    "centering on a continuous model needs a positive mc_budget")
            raw_center, stderr = _mc_center(path, kernel, centering, W,
                                            int(mc_budget), mc_seed)
            raw -= raw_center

    if normalization == "pairs":
        scale = 2.0 / (n * (n - 1))
        return UStatResult(raw * scale, centering, n, normalization, stderr * scale)
    return UStatResult(raw, centering, n, normalization, stderr)


def _mc_center(path, kernel, centering, W, budget, seed):
    """Plug-in Monte Carlo center for continuous models, with standard error."""
    from .chain import simulate

    totals = np.empty(budget)
    for b in range(budget):
        rep = simulate(path.model, len(path), seed, initial=path.initial_spec,
                       stream=0xCE0000 + b)
        pm = kernel.base.pair_matrix(rep.values)
        if centering == "joint-expectation":
            totals[b] = float((W * pm).sum())
        elif centering == "pi-expectation":
            iu = np.triu_indices(len(path), k=1)
            totals[b] = float(pm[iu].mean()) * float(W.sum())
        else:
            raise UStatError(f"unknown centering {centering!r}")
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(budget))


# ---------------------------------------------------------------------------
# martingale decomposition
# ---------------------------------------------------------------------------

def conditional_pair_expectations(ops: FiniteKernelOps, values: np.ndarray,
                                  t_n: int) -> np.ndarray:
    """E_{j-k}[h_{i,j}(X_i, X_j)] for every pair i < j and every k = 0..t_n.

    Conditioning at level l = j - k follows the trajectory's sigma-algebra:
    for l >= i the value is a transition-power average from the observed X_l;
    for 1 <= l < i it also integrates the not-yet-realized X_i; for l < 1
    the convention E_l = E (full expectation under chi) applies.
    """
    n = ops.n
    v = np.asarray(values, dtype=np.int64)
    i0, j0 = np.triu_indices(n, k=1)  # 0-based pair indices
    a = ops.W[i0, j0]
    gaps = j0 - i0
    u0 = np.empty(len(i0))
    laws = ops.laws()
    for g in range(1, n):
        m = gaps == g
        if m.any():
            u0[m] = laws[i0[m]] @ ops.w_gap(g)

    CE = np.empty((len(i0), t_n + 1))
    for k in range(t_n + 1):
        l0 = j0 - k  # 0-based index of X_l; level l = l0 + 1
        col = np.empty(len(i0))
        known = l0 >= i0  # X_i already observed at level l (and l >= 1)
        col[known] = ops.m_level(k)[v[i0[known]], v[l0[known]]]
        mid = (~known) & (l0 >= 0)  # 1 <= l < i: d = i - l steps to X_i, then gap
        if mid.any():
            for g in np.unique(gaps[mid]):
                sel = mid & (gaps == g)
                vec = ops.power(k - g) @ ops.w_gap(int(g))
                col[sel] = vec[v[l0[sel]]]
        below = l0 < 0  # level below 1: unconditional convention
        col[below] = u0[below]
        CE[:, k] = a * col
    return CE


def martingale_decomposition(chain: FiniteChain, path: ChainPath,
                             kernel: KernelFamily, t_n: int,
                             initial_law: Optional[np.ndarray] = None) -> DecompositionResult:
    """Split the jointly centered U-statistic into M (t_n levels) + R.

    Level k of M collects sum_{i<j} (E_{j-k+1}[h] - E_{j-k}[h]); R is what is
    left after level t_n, sum_{i<j} (E_{j-t_n}[h] - E[h]). Only finite chains
    are supported: the conditional expectations are exact matrix-power sums,
    so M + R reproduces the centered statistic to floating-point accuracy.
    """
    if not isinstance(chain, FiniteChain) or not isinstance(path.model, FiniteChain):
        raise UStatError("decomposition needs a finite chain; exact conditional "
                         "expectations are unavailable for continuous models")
    n = len(path)
    if kernel.n != n:
        raise UStatError(f"kernel horizon {kernel.n} != path length {n}")
    if not (1 <= t_n <= n):
        raise UStatError(f"t_n must lie in [1, {n}], got {t_n}")

    law = initial_law if initial_law is not None else path.initial_law
    ops = FiniteKernelOps(chain, kernel, law)
    i0, j0 = np.triu_indices(n, k=1)
    CE = conditional_pair_expectations(ops, path.values, t_n)

    centers = ops.joint_centers()[i0, j0]
    per_level = np.array([float((CE[:, k - 1] - CE[:, k]).sum())
                          for k in range(1, t_n + 1)])
    M = float((CE[:, 0] - CE[:, t_n]).sum())
    R = float((CE[:, t_n] - centers).sum())
    u_centered = float((CE[:, 0] - centers).sum())
    return DecompositionResult(M=M, R=R, t_n=t_n, per_level=per_level,
                               u_centered=u_centered)


def martingale_residuals(chain: FiniteChain, path: ChainPath,
                         kernel: KernelFamily) -> np.ndarray:
    """|E_{j-1}[Y_j]| for j = 2..n, where Y_j sums the one-step-centered kernel
    h(X_i, X_j) - E[h(X_i, .) | X_{j-1}] over i < j.

    Each residual is an exact sum over the conditional law of X_j and is zero
    in exact arithmetic; the returned values measure only floating-point
    noise in the two summation orders.
    """
    if not isinstance(path.model, FiniteChain):
        raise UStatError("martingale residuals need a finite chain")
    ops = FiniteKernelOps(chain, kernel, path.initial_law)
    v = np.asarray(path.values, dtype=np.int64)
    n = len(v)
    M1 = ops.m_level(1)
    out = np.empty(n - 1)
    for j in range(2, n + 1):
        i0 = np.arange(j - 1)  # 0-based indices of X_1..X_{j-1}
        a = ops.W[i0, j - 1]
        s = a @ ops.H[v[i0], :]  # sum_i a h(X_i, y) as a vector over y
        term1 = float(ops.P[v[j - 2]] @ s)
        term2 = float(a @ M1[v[i0], v[j - 2]])
        out[j - 2] = abs(term1 - term2)
    return out


# ---------------------------------------------------------------------------
# rank statistics
# ---------------------------------------------------------------------------

def _check_no_ties(x: np.ndarray, what: str):
    if len(np.unique(x)) != len(x):
        raise UStatError(f"{what} requires distinct values; ties present")


def tau_kendall(ranks: Sequence) -> float:
    """Kendall rank correlation of a tie-free sequence against its index order.

    2/(n(n-1)) * sum_{i != j} [1{X_i > X_j} 1{i > j} + 1{X_i < X_j} 1{i < j}] - 1,
    which is +1 on increasing sequences and -1 on decreasing ones.
    """
    x = np.asarray(ranks, dtype=float)
    n = len(x)
    if n < 2:
        raise UStatError("need at least two ranks")
    _check_no_ties(x, "Kendall tau")
    i0, j0 = np.triu_indices(n, k=1)
    concordant = int(np.count_nonzero(x[i0] < x[j0]))
    return 4.0 * concordant / (n * (n - 1)) - 1.0


def tau_ap(ranks: Sequence) -> float:
    """Average-precision correlation: top-weighted agreement with index order.

    2/(n-1) * sum_{j=2..n} [sum_{i<j} 1{X_i < X_j}] / (j-1) - 1. The pair
    kernel behind the sum is 1{x < y}/(j-1), which depends on j only.
    """
    x = np.asarray(ranks, dtype=float)
    n = len(x)
    if n < 2:
        raise UStatError("need at least two ranks")
    _check_no_ties(x, "average-precision correlation")
    inner = 0.0
    for j in range(2, n + 1):
        inner += np.count_nonzero(x[: j - 1] < x[j - 1]) / (j - 1)
    return 2.0 * inner / (n - 1) - 1.0


def wilcoxon_weighted(sample0: Sequence, sample1: Sequence,
                      weights0: Optional[Sequence] = None,
                      weights1: Optional[Sequence] = None) -> float:
    """Weight-adjusted two-sample rank statistic.

    (sum_i w_i sum_j w_j)^{-1} sum_{i,j} w_i w_j h(x_i, y_j) with
    h(x, y) = 1/2 1{x < y} + 1/2 1{x <= y}, so ties contribute one half.
    Weights default to 1 (the classical rank-sum statistic, normalized).
    """
    x = np.asarray(sample0, dtype=float)
    y = np.asarray(sample1, dtype=float)
    if x.size == 0 or y.size == 0:
        raise UStatError("both samples must be non-empty")
    w0 = np.ones(len(x)) if weights0 is None else np.asarray(weights0, dtype=float)
    w1 = np.ones(len(y)) if weights1 is None else np.asarray(weights1, dtype=float)
    for w, name in ((w0, "weights0"), (w1, "weights1")):
        if not np.all(np.isfinite(w)):
            raise UStatError(f"{name} must be finite")
        if np.any(w <= 0):
            raise UStatError(f"{name} must be strictly positive")
    total = w0.sum() * w1.sum()
    if total <= 0:
        raise UStatError("zero total weight")
    h = 0.5 * (x[:, None] < y[None, :]) + 0.5 * (x[:, None] <= y[None, :])
    return float(w0 @ h @ w1 / total)
