"""Index-dependent bounded kernel families h_{i,j} on pairs of states.

A family is a base pair kernel (lookup table, product f(x)f(y), cos(x - y),
or diagonal indicator) scaled by per-index weights a_{i,j}, defined for
1 <= i < j <= n. The module tests and enforces the degeneracy condition
that both invariant-law marginals of h are constant, projects arbitrary
kernels onto that class, and computes the sup constant A = 2 max ||h_{i,j}||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from .chain import AR1Model, ARCHModel, ChainModel, FiniteChain, simulate


class KernelError(ValueError):
    """Invalid kernel family or unsupported evaluation mode."""


# ---------------------------------------------------------------------------
# base pair kernels
# ---------------------------------------------------------------------------

class PairKernel:
    """Index-free kernel of two states; bases are immutable after construction."""

    declared_sup: float

    def eval(self, x, y):
        raise NotImplementedError

    def pair_matrix(self, values: np.ndarray) -> np.ndarray:
        """Matrix of h(v_i, v_j) over all ordered pairs of path values."""
        raise NotImplementedError

    def table(self, chain: FiniteChain) -> np.ndarray:
        raise KernelError(f"{type(self).__name__} has no finite-state table")

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class TableKernel(PairKernel):
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.values, dtype=float)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise KernelError(f"kernel table must be square, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise KernelError("kernel table must be finite")
        object.__setattr__(self, "values", t)
        object.__setattr__(self, "declared_sup", float(np.max(np.abs(t))))

    def eval(self, x, y):
        return self.values[x, y]

    def pair_matrix(self, values):
        v = np.asarray(values, dtype=np.int64)
        return self.values[v[:, None], v[None, :]]

    def table(self, chain):
        if self.values.shape[0] != chain.n_states:
            raise KernelError(
                f"table is {self.values.shape[0]}x{self.values.shape[0]} but "
                f"chain has {chain.n_states} states")
        return self.values

    def describe(self):
        return {"kind": "table", "values": self.values.tolist()}


@dataclass(frozen=True)
class ProductKernel(PairKernel):
    """h(x, y) = f(x) f(y); f is a vector over finite states or a bounded map."""

    f: Union[np.ndarray, Callable]
    f_bound: Optional[float] = None

    def __post_init__(self):
        if callable(self.f):
            if self.f_bound is None:
                raise KernelError("callable f needs a declared bound f_bound")
            object.__setattr__(self, "declared_sup", float(self.f_bound) ** 2)
        else:
            f = np.asarray(self.f, dtype=float)
            object.__setattr__(self, "f", f)
            object.__setattr__(self, "declared_sup", float(np.max(np.abs(f)) ** 2))

    def _fv(self, values):
        if callable(self.f):
            return np.asarray(self.f(np.asarray(values, dtype=float)), dtype=float)
        return self.f[np.asarray(values, dtype=np.int64)]

    def eval(self, x, y):
        return self._fv(np.atleast_1d(x))[0] * self._fv(np.atleast_1d(y))[0]

    def pair_matrix(self, values):
        fv = self._fv(values)
        return fv[:, None] * fv[None, :]

    def table(self, chain):
        if callable(self.f):
            raise KernelError("product kernel with callable f has no finite table")
        if len(self.f) != chain.n_states:
            raise KernelError(f"f has length {len(self.f)}, chain has {chain.n_states} states")
        return np.outer(self.f, self.f)

    def describe(self):
        f = "<callable>" if callable(self.f) else np.asarray(self.f).tolist()
        return {"kind": "product", "f": f}


@dataclass(frozen=True)
class CosineKernel(PairKernel):
    """Translation-invariant h(x, y) = cos(x - y) on scalar state spaces."""

    def __post_init__(self):
        object.__setattr__(self, "declared_sup", 1.0)

    def eval(self, x, y):
        return math.cos(float(x) - float(y))

    def pair_matrix(self, values):
        v = np.asarray(values, dtype=float).reshape(len(values), -1)[:, 0]
        return np.cos(v[:, None] - v[None, :])

    def describe(self):
        return {"kind": "cosine"}


@dataclass(frozen=True)
class IndicatorKernel(PairKernel):
    """h(x, y) = 1{x = y}."""

    def __post_init__(self):
        object.__setattr__(self, "declared_sup", 1.0)

    def eval(self, x, y):
        return 1.0 if x == y else 0.0

    def pair_matrix(self, values):
        v = np.asarray(values)
        return (v[:, None] == v[None, :]).astype(float)

    def table(self, chain):
        return np.eye(chain.n_states)

    def describe(self):
        return {"kind": "indicator"}


# ---------------------------------------------------------------------------
# index weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Weights:
    """Per-index factors a_{i,j}; fn must accept numpy index arrays."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str
    depends_on_i: bool


def unit_weights() -> Weights:
    return Weights(lambda i, j: np.ones(np.broadcast(i, j).shape), "unit", False)


def constant_weights(c: float) -> Weights:
    if not math.isfinite(c):
        raise KernelError("weight must be finite")
    return Weights(lambda i, j: np.full(np.broadcast(i, j).shape, float(c)),
                   f"constant({c})", False)


def inverse_gap_weights() -> Weights:
    """Forgetting factors a_{i,j} = |j - i|^{-1}: distant pairs count less."""
    return Weights(lambda i, j: 1.0 / np.abs(j - i), "inverse-gap", True)


def inverse_offset_weights() -> Weights:
    """a_{i,j} = (j - 1)^{-1}, the average-precision weighting; i-free."""
    return Weights(lambda i, j: 1.0 / (j - 1.0), "inverse-offset", False)


_WEIGHTS_BY_NAME = {
    "unit": unit_weights,
    "inverse-gap": inverse_gap_weights,
    "inverse-offset": inverse_offset_weights,
}


def resolve_weights(spec) -> Weights:
    if isinstance(spec, Weights):
        return spec
    if isinstance(spec, str):
        try:
            return _WEIGHTS_BY_NAME[spec]()
        except KeyError:
            raise KernelError(f"unknown weight name {spec!r}") from None
    if callable(spec):
        return Weights(lambda i, j: np.vectorize(spec, otypes=[float])(i, j),
                       "custom", True)
    raise KernelError(f"cannot interpret weights {spec!r}")


# ---------------------------------------------------------------------------
# kernel families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelFamily:
    """h_{i,j}(x, y) = a_{i,j} * base(x, y) for 1 <= i < j <= n."""

    base: PairKernel
    n: int
    weight: Weights
    sup_bound: float
    depends_on_i: bool

    def eval(self, i: int, j: int, x, y) -> float:
        if not (1 <= i < j <= self.n):
            raise KernelError(f"index pair ({i}, {j}) outside 1 <= i < j <= {self.n}")
        a = float(np.asarray(self.weight.fn(np.array(i), np.array(j))))
        return a * float(self.base.eval(x, y))

    def weight_matrix(self) -> np.ndarray:
        """(n+1) x (n+1) array W with W[i, j] = a_{i,j} for i < j, else 0 (1-based)."""
        n = self.n
        ii, jj = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
        W = np.zeros((n + 1, n + 1))
        mask = ii < jj
        vals = np.zeros_like(W[1:, 1:])
        try:
            with np.errstate(divide="ignore", invalid="ignore"):
                vals[mask] = self.weight.fn(ii[mask].astype(float),
                                            jj[mask].astype(float))
        except ZeroDivisionError:
            raise KernelError("non-finite weight in index domain") from None
        if not np.all(np.isfinite(vals)):
            raise KernelError("non-finite weight in index domain")
        W[1:, 1:] = vals
        return W

    def max_abs_weight(self) -> float:
        W = self.weight_matrix()
        return float(np.max(np.abs(W)))

    def base_table(self, chain: FiniteChain) -> np.ndarray:
        return self.base.table(chain)

    def with_horizon(self, n: int) -> "KernelFamily":
        return kernel_family(self.base, n, self.weight)


def kernel_family(base: PairKernel, n: int, weights=None) -> KernelFamily:
    """Assemble a family from a base kernel and optional index weights."""
    if n < 2:
        raise KernelError(f"horizon must be >= 2, got {n}")
    w = resolve_weights(weights) if weights is not None else unit_weights()
    fam = KernelFamily(base=base, n=n, weight=w, sup_bound=0.0,
                       depends_on_i=w.depends_on_i)
    sup = fam.max_abs_weight() * base.declared_sup
    return replace(fam, sup_bound=sup)


def weighted_kernel(base: KernelFamily, weights) -> KernelFamily:
    """Scale a family by weights a_{i,j}; sup_bound becomes max|a| * ||h||_inf."""
    w = resolve_weights(weights)
    if base.weight.name != "unit":
        prev = base.weight
        w = Weights(lambda i, j, _p=prev.fn, _w=w.fn: _p(i, j) * _w(i, j),
                    f"{prev.name}*{w.name}", prev.depends_on_i or w.depends_on_i)
    return kernel_family(base.base, base.n, w)


# ---------------------------------------------------------------------------
# degeneracy: deviation, projection, centering
# ---------------------------------------------------------------------------

def _marginal_means(table: np.ndarray, pi: np.ndarray):
    """(E_pi h(., y), E_pi h(x, .)) as vectors over y resp. x."""
    return pi @ table, table @ pi


def _table_for(kernel: KernelFamily, pi: np.ndarray,
               chain: Optional[FiniteChain]) -> np.ndarray:
    """Base table of a family in a finite-state setting with |pi| states."""
    if isinstance(chain, FiniteChain):
        return kernel.base_table(chain)
    base = kernel.base
    if isinstance(base, TableKernel):
        return base.values
    if isinstance(base, ProductKernel) and not callable(base.f):
        return np.outer(base.f, base.f)
    if isinstance(base, IndicatorKernel):
        return np.eye(len(pi))
    raise KernelError("exact finite-state evaluation needs a tabular base kernel")


def _pi_samples(model: ChainModel, budget: int, seed: int) -> np.ndarray:
    path = simulate(model, budget, seed, initial="stationary", stream=0xCA)
    return np.asarray(path.values, dtype=float).reshape(budget, -1)[:, 0]


def pi_canonical_deviation(kernel: KernelFamily, pi: Optional[np.ndarray] = None,
                           chain: Optional[ChainModel] = None,
                           sample_budget: Optional[int] = None,
                           seed: int = 0) -> float:
    """Max spread of the two invariant-law marginals over the index domain.

    Exact on finite chains (pi required). For AR(1)/ARCH a sampling budget
    is required and the returned deviation is a Monte Carlo estimate; use
    :func:`is_pi_canonical` for the 3-standard-error verdict.
    """
    dev, _ = _deviation_and_se(kernel, pi, chain, sample_budget, seed)
    return dev


def is_pi_canonical(kernel: KernelFamily, pi: Optional[np.ndarray] = None,
                    chain: Optional[ChainModel] = None,
                    sample_budget: Optional[int] = None,
                    seed: int = 0, exact_tol: float = 1e-10) -> bool:
    """Deviation <= 1e-10 when exact, <= 3 standard errors when sampled."""
    dev, se = _deviation_and_se(kernel, pi, chain, sample_budget, seed)
    return dev <= (exact_tol if se == 0.0 else 3.0 * se)


def _deviation_and_se(kernel, pi, chain, sample_budget, seed):
    if isinstance(chain, FiniteChain) or (chain is None and pi is not None):
        if pi is None:
            raise KernelError("pi is required for the exact finite-chain check")
        pi = np.asarray(pi, dtype=float)
        table = _table_for(kernel, pi, chain)
        first, second = _marginal_means(table, pi)
        spread = max(first.max() - first.min(), second.max() - second.min())
        return kernel.max_abs_weight() * float(spread), 0.0

    if chain is None:
        raise KernelError("missing pi (finite chains) or chain model (continuous)")
    if not sample_budget:
        raise KernelError("continuous models need a positive sampling budget")
    samples = _pi_samples(chain, int(sample_budget), seed)
    m = len(samples)
    probes = np.quantile(samples, np.linspace(0.02, 0.98, 25))
    # rows: one probe point per column, sample index per row
    h_right = np.empty((m, len(probes)))
    h_left = np.empty((m, len(probes)))
    for k, t in enumerate(probes):
        h_right[:, k] = _eval_base_vec(kernel.base, samples, np.full(m, t))
        h_left[:, k] = _eval_base_vec(kernel.base, np.full(m, t), samples)
    spreads, ses = [], []
    for block in (h_right, h_left):
        means = block.mean(axis=0)
        hi, lo = int(np.argmax(means)), int(np.argmin(means))
        diff = block[:, hi] - block[:, lo]
        spreads.append(diff.mean())
        ses.append(diff.std(ddof=1) / math.sqrt(m))
    k = int(np.argmax(spreads))
    a = kernel.max_abs_weight()
    return a * float(spreads[k]), a * float(ses[k])


def _eval_base_vec(base: PairKernel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if isinstance(base, CosineKernel):
        return np.cos(xs - ys)
    if isinstance(base, ProductKernel) and callable(base.f):
        return np.asarray(base.f(xs)) * np.asarray(base.f(ys))
    if isinstance(base, IndicatorKernel):
        return (xs == ys).astype(float)
    return np.array([base.eval(x, y) for x, y in zip(xs, ys)])


def hoeffding_project(kernel: KernelFamily, pi: Optional[np.ndarray] = None,
                      chain: Optional[ChainModel] = None,
                      sample_budget: Optional[int] = None,
                      seed: int = 0) -> KernelFamily:
    """Project onto the degenerate class: h~(x,y) = h - E_pi h(x,.) - E_pi h(.,y).

    Both marginals of the output are constant (equal to -E_{pi x pi} h), so
    the projected family passes :func:`pi_canonical_deviation` at tolerance.
    Exact for finite chains; Monte Carlo marginal estimates otherwise.
    """
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        table = _table_for(kernel, pi, chain)
        first, second = _marginal_means(table, pi)
        projected = table - second[:, None] - first[None, :]
        return kernel_family(TableKernel(projected), kernel.n, kernel.weight)

    if chain is None or not sample_budget:
        raise KernelError("continuous projection needs a chain model and budget")
    samples = _pi_samples(chain, int(sample_budget), seed)
    base = _SampleProjectedKernel(base=kernel.base, samples=samples)
    return kernel_family(base, kernel.n, kernel.weight)


@dataclass(frozen=True)
class _SampleProjectedKernel(PairKernel):
    """Base kernel minus plug-in marginal means over a frozen pi-sample."""

    base: PairKernel
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "declared_sup", 3.0 * self.base.declared_sup)

    def _right_mean(self, xs):
        return np.array([
            _eval_base_vec(self.base, np.full(len(self.samples), x), self.samples).mean()
            for x in np.atleast_1d(xs)])

    def _left_mean(self, ys):
        return np.array([
            _eval_base_vec(self.base, self.samples, np.full(len(self.samples), y)).mean()
            for y in np.atleast_1d(ys)])

    def eval(self, x, y):
        return (float(self.base.eval(x, y)) - float(self._right_mean(x)[0])
                - float(self._left_mean(y)[0]))

    def pair_matrix(self, values):
        raw = self.base.pair_matrix(values)
        v = np.asarray(values, dtype=float).reshape(len(values), -1)[:, 0]
        return raw - self._right_mean(v)[:, None] - self._left_mean(v)[None, :]

    def describe(self):
        return {"kind": "sample-projected", "base": self.base.describe(),
                "samples": len(self.samples)}


def sup_constant_A(kernel: KernelFamily, chain: Optional[ChainModel] = None,
                   probe_budget: Optional[int] = None, seed: int = 0):
    """A = 2 max over indices and states of |h_{i,j}|.

    Exact for tabular bases. For continuous bases returns a
    (certified_lower, declared_upper) pair: the lower bound is the max over
    probed state pairs, the upper comes from the base's declared sup.
    """
    a_max = kernel.max_abs_weight()
    base = kernel.base
    if isinstance(base, TableKernel):
        return 2.0 * a_max * float(np.max(np.abs(base.values)))
    if isinstance(base, ProductKernel) and not callable(base.f):
        return 2.0 * a_max * float(np.max(base.f**2))
    if isinstance(base, IndicatorKernel):
        return 2.0 * a_max
    if chain is not None and isinstance(chain, FiniteChain):
        return 2.0 * a_max * float(np.max(np.abs(kernel.base_table(chain))))

    budget = int(probe_budget or 1000)
    if chain is not None:
        xs = _pi_samples(chain, budget, seed)
    else:
        g = np.random.Generator(np.random.Philox(key=np.array([seed, 0xA], dtype=np.uint64)))
        xs = g.normal(0, 3, budget)
    g2 = np.random.Generator(np.random.Philox(key=np.array([seed, 0xB], dtype=np.uint64)))
    ys = xs[g2.permutation(budget)]
    lower = 2.0 * a_max * float(np.max(np.abs(_eval_base_vec(base, xs, ys))))
    upper = 2.0 * a_max * base.declared_sup
    return (lower, upper)


@dataclass(frozen=True)
class CenteredKernel:
    """p_{i,j} = h_{i,j} - E_pi[h_{i,j}], with the scalar expectation per pair."""

    family: KernelFamily
    e_base: float  # E_{pi x pi} of the base kernel; per-pair center is a_{i,j} * e_base

    def e_pi(self, i: int, j: int) -> float:
        a = float(np.asarray(self.family.weight.fn(np.array(i), np.array(j))))
        return a * self.e_base

    def eval(self, i: int, j: int, x, y) -> float:
        return self.family.eval(i, j, x, y) - self.e_pi(i, j)


def centered_kernel(kernel: KernelFamily, pi: np.ndarray,
                    chain: Optional[FiniteChain] = None) -> CenteredKernel:
    """Center by the invariant-law expectation (the common marginal value for
    degenerate kernels, the product expectation E_{pi x pi} otherwise)."""
    pi = np.asarray(pi, dtype=float)
    table = _table_for(kernel, pi, chain)
    e_base = float(pi @ table @ pi)
    return CenteredKernel(family=kernel, e_base=e_base)
