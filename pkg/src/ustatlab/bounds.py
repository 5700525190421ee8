"""Constants of the exponential tail bounds and evaluators for their
right-hand sides.

Covers the sup constant A, the variance-flavored quantities B_n and C_n
(exact enumeration over states on finite chains), the induction depth
t_n = floor(r log n), the displayed polynomial bounds of the two main
inequalities and their coarse pairs-normalized form, the deterministic
remainder bounds, the initial-law density-ratio norm, and the Bernstein
bound for additive functionals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .chain import ErgodicityConstants, FiniteChain, ergodicity_constants, \
    stationary_distribution
from .kernels import KernelFamily
from .ustat import FiniteKernelOps


class BoundsError(ValueError):
    """Invalid bound-constant request."""


@dataclass
class BoundConstants:
    """Everything a theorem right-hand side needs.

    kappa and beta are calibration constants (the inequalities only assert
    their existence); they default to 1 and are labeled by ``method`` and
    ``flags`` when fitted rather than supplied.
    """

    A: float
    Bn: Optional[float] = None
    Cn: Optional[float] = None
    tn: int = 1
    r: float = 1.0
    kappa: float = 1.0
    beta: float = 1.0
    method: str = "exact-enumeration"
    budgets: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"A": self.A, "Bn": self.Bn, "Cn": self.Cn, "tn": self.tn,
                "r": self.r, "kappa": self.kappa, "beta": self.beta,
                "method": self.method, "budgets": dict(self.budgets),
                "flags": dict(self.flags)}


@dataclass(frozen=True)
class DensityRatioNorm:
    """L^p(pi) norm of d(chi)/d(pi), with the conjugate exponent q."""

    p: float
    q: float
    value: float


@dataclass(frozen=True)
class BernsteinParams:
    """Inputs of the Bernstein bound for sums of chain functionals.

    lam is the spectral parameter; c bounds each summand function and
    sigma2 is the invariant-law average of their squared values.
    """

    lam: float
    c: float
    sigma2: float

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise BoundsError("spectral parameter must lie in [0, 1)")
        if self.c < 0 or self.sigma2 < 0:
            raise BoundsError("c and sigma2 must be nonnegative")

    @property
    def A1(self) -> float:
        return 1.0 / 3.0 if self.lam == 0.0 else 5.0 / (1.0 - self.lam)

    @property
    def A2(self) -> float:
        return (1.0 + self.lam) / (1.0 - self.lam)


def compute_tn(rho: float, n: int, r: Optional[float] = None) -> Tuple[int, float]:
    """Induction depth t_n = floor(r log n) with admissible rate r.

    Admissibility requires r > 2/log(1/rho); the default takes that
    threshold with 5% slack, the smallest depth the remainder analysis
    tolerates. The depth is clamped to [1, n] with a warning.
    """
    if not (0.0 < rho < 1.0):
        raise BoundsError(f"rho must lie in (0, 1), got {rho}")
    if n < 2:
        raise BoundsError(f"n must be >= 2, got {n}")
    r_min = 2.0 / math.log(1.0 / rho)
    if r is None:
        r = 1.05 * r_min
    elif r <= r_min:
        raise BoundsError(f"rate r={r} violates r > 2/log(1/rho) = {r_min}")
    t_n = math.floor(r * math.log(n))
    if t_n < 1:
        warnings.warn(f"t_n = floor({r * math.log(n):.4g}) clamped up to 1")
        t_n = 1
    elif t_n > n:
        warnings.warn(f"t_n = {t_n} clamped down to n = {n}")
        t_n = n
    return t_n, r


def _pair_weight_sums(kernel: KernelFamily):
    """(sum_{j>i} a^2 per i, sum_{i<j} a^2 per j) over the index domain."""
    W2 = kernel.weight_matrix()[1:, 1:] ** 2
    return W2.sum(axis=1), W2.sum(axis=0), W2


def compute_Cn(chain: FiniteChain, kernel: KernelFamily, stationary: bool = True,
               initial_law: Optional[np.ndarray] = None,
               constants: Optional[ErgodicityConstants] = None) -> float:
    """C_n from the exact double sum over index pairs and states.

    C_n^2 = sum_{j=2..n} sum_{i<j} E[ E_{X' ~ nu}[ p_{i,j}^2(X_i, X') ] ],
    with p_{i,j} the centered kernel and X_i following its exact marginal
    law (the invariant law when ``stationary``).
    """
    cst = constants if constants is not None else ergodicity_constants(chain)
    pi = cst.pi
    ops = FiniteKernelOps(chain, kernel, pi if stationary else initial_law)
    e_base = float(pi @ ops.H @ pi)
    Q = (ops.H - e_base) ** 2
    qnu = Q @ cst.nu  # E_{X' ~ nu} (h(x, X') - e)^2 as a vector over x
    row_sums, _, _ = _pair_weight_sums(kernel)
    if stationary:
        total = float(pi @ qnu) * float(row_sums.sum())
    else:
        laws = ops.laws()
        per_i = laws @ qnu
        total = float(row_sums @ per_i)
    return math.sqrt(total)


def compute_Bn(chain: FiniteChain, kernel: KernelFamily, t_n: int,
               constants: Optional[ErgodicityConstants] = None) -> float:
    """B_n by exact enumeration over the depth range and both branches.

    B_n^2 takes the larger of two suprema over k = 0..t_n: over rows, the
    nu-average of the squared k-step smoothed centered kernel summed across
    later indices; over columns, the pi-average summed across earlier
    indices. k = 0 uses the Dirac convention (no smoothing).
    """
    if t_n < 0:
        raise BoundsError(f"t_n must be >= 0, got {t_n}")
    cst = constants if constants is not None else ergodicity_constants(chain)
    pi = cst.pi
    ops = FiniteKernelOps(chain, kernel, pi)
    e_base = float(pi @ ops.H @ pi)
    centered = ops.H - e_base
    row_sums, col_sums, _ = _pair_weight_sums(kernel)
    max_row = float(row_sums.max())
    max_col = float(col_sums.max())

    best = 0.0
    for k in range(t_n + 1):
        G = centered @ ops.power(k).T  # G[x, z] = E[p(x, X) | X ~ P^k(z, .)]
        branch1 = float(np.max(G**2 @ cst.nu)) * max_row
        branch2 = float(np.max(pi @ G**2)) * max_col
        best = max(best, branch1, branch2)
    return math.sqrt(best)


def independent_Bn_Cn(pi: np.ndarray, kernel: KernelFamily,
                      n: Optional[int] = None) -> Tuple[float, float]:
    """(B_n, C_n) in the independent setting, where only k = 0 survives and
    the reference law nu coincides with pi."""
    pi = np.asarray(pi, dtype=float)
    from .kernels import _table_for
    table = _table_for(kernel, pi, None)
    if n is not None and n != kernel.n:
        kernel = kernel.with_horizon(n)
    e_base = float(pi @ table @ pi)
    Q = (table - e_base) ** 2
    row_sums, col_sums, _ = _pair_weight_sums(kernel)
    b1 = float(np.max(Q @ pi)) * float(row_sums.max())
    b2 = float(np.max(pi @ Q)) * float(col_sums.max())
    Bn2 = max(b1, b2)
    Cn2 = float(pi @ Q @ pi) * float(row_sums.sum())
    return math.sqrt(Bn2), math.sqrt(Cn2)


_VARIANTS = ("T1a", "T1b", "T2", "Eq3")


def theorem_rhs(variant: str, constants: BoundConstants, n: int, u: float) -> float:
    """Evaluate the displayed right-hand side of one tail inequality at u.

    T1a / T1b are the Hoeffding-type bounds without / with the C_n term and
    an additive A(u^2 + n); T2 is the stationary Bernstein-type bound whose
    additive term is A(u^2 + log n). All three are on the raw pair-sum
    scale. Eq3 is the coarse bound on the pairs-normalized scale,
    kappa ||h||_inf log n (u/n + (u/n)^2), with ||h||_inf = A/2.
    """
    if u <= 0:
        raise BoundsError(f"u must be positive, got {u}")
    if n < 2:
        raise BoundsError(f"n must be >= 2, got {n}")
    c = constants
    logn = math.log(n)
    sqn = math.sqrt(n)
    if variant == "Eq3":
        ratio = u / n
        return c.kappa * (c.A / 2.0) * logn * (ratio + ratio**2)
    if variant not in _VARIANTS:
        raise BoundsError(f"unknown variant {variant!r}; choose from {_VARIANTS}")
    if c.Bn is None:
        raise BoundsError(f"variant {variant} needs B_n")
    if variant in ("T1b", "T2") and c.Cn is None:
        raise BoundsError(f"variant {variant} needs C_n")
    if variant == "T1a":
        sqrt_u_coeff = c.A * logn * sqn
        tail = c.A * (u**2 + n)
    elif variant == "T1b":
        sqrt_u_coeff = c.Cn + c.A * logn * sqn
        tail = c.A * (u**2 + n)
    elif variant == "T2":
        sqrt_u_coeff = c.Cn + c.A * logn * sqn
        tail = c.A * (u**2 + logn)
    else:
        raise BoundsError(f"unknown variant {variant!r}; choose from {_VARIANTS}")
    inner = (sqrt_u_coeff * math.sqrt(u)
             + (c.A + c.Bn * sqn) * u
             + (2.0 * c.A * sqn) * u**1.5
             + tail)
    return c.kappa * logn * inner


def best_theorem_bound(constants: BoundConstants, n: int, u: float,
                       depends_on_i: bool) -> Tuple[float, str]:
    """Minimum of the applicable Hoeffding-type variants, with its label.

    When the kernels do not depend on i both T1a and T1b apply; the bounds
    never say which to prefer, so report the smaller one, labeled.
    """
    if depends_on_i:
        return theorem_rhs("T1b", constants, n, u), "T1b"
    va = theorem_rhs("T1a", constants, n, u)
    vb = theorem_rhs("T1b", constants, n, u)
    return (va, "T1a") if va <= vb else (vb, "T1b")


def remainder_bound(variant: str, A: float, L: float, n: int, t_n: int) -> float:
    """Deterministic bound on the decomposition remainder |R|.

    "general" holds for any initial law: A (2L + n t_n). "stationary"
    sharpens it to 2 L A (1 + t_n + t_n^2) when the chain starts from the
    invariant law.
    """
    if min(A, L, n, t_n) < 0:
        raise BoundsError("inputs must be nonnegative")
    if variant == "general":
        return A * (2.0 * L + n * t_n)
    if variant == "stationary":
        return 2.0 * L * A * (1.0 + t_n + t_n**2)
    raise BoundsError(f"unknown remainder variant {variant!r}")


def density_ratio_norm(chi, pi, p: float) -> DensityRatioNorm:
    """||d(chi)/d(pi)||_{pi,p} for finite laws, with conjugate q = p/(p-1)."""
    chi = np.asarray(chi, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if chi.shape != pi.shape:
        raise BoundsError("chi and pi must have the same length")
    if not (p > 1):
        raise BoundsError(f"p must lie in (1, inf], got {p}")
    support = chi > 0
    if np.any(pi[support] <= 0):
        bad = int(np.nonzero(support & (pi <= 0))[0][0])
        raise BoundsError(
            f"chi is not absolutely continuous w.r.t. pi: state {bad} has "
            f"chi > 0 but pi = 0")
    ratio = np.zeros_like(chi)
    pos = pi > 0
    ratio[pos] = chi[pos] / pi[pos]
    if math.isinf(p):
        return DensityRatioNorm(p=math.inf, q=1.0, value=float(ratio.max()))
    value = float((pi @ ratio**p) ** (1.0 / p))
    return DensityRatioNorm(p=p, q=p / (p - 1.0), value=value)


def bernstein_mc_bound(params: BernsteinParams, norm: DensityRatioNorm,
                       n: int, u: float) -> Tuple[float, float]:
    """Bernstein threshold for the mean of n chain functionals, plus the
    probability bound.

    The mean exceeds 2 q u A1 c / n + sqrt(2 q u A2 sigma^2 / n) with
    probability at most ||d(chi)/d(pi)||_{pi,p} e^{-u}.
    """
    if n < 1:
        raise BoundsError("n must be >= 1")
    if u < 0:
        raise BoundsError("u must be >= 0")
    q = norm.q
    threshold = (2.0 * q * u * params.A1 * params.c / n
                 + math.sqrt(2.0 * q * u * params.A2 * params.sigma2 / n))
    prob = norm.value * math.exp(-u)
    return threshold, prob
