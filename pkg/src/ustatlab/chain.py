"""Markov chain models, trajectory simulation, and ergodicity constants.

Three model families: finite-state chains given by a row-stochastic matrix,
AR(1) processes X' = H(X) + Z with bounded drift, and scalar ARCH processes
X' = H(X) + G(X) Z. For finite chains every constant consumed by the tail
bounds (invariant law, contraction rate, Doeblin minorization/majorization,
spectral parameter, mixing time) is computed exactly from the matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .rng import philox_generator

ATOL = 1e-12


class ChainError(ValueError):
    """Invalid chain model or constants computation failure."""


def _as_prob_vector(v, size: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (size,):
        raise ChainError(f"{what} must have length {size}, got shape {v.shape}")
    if np.any(v < -ATOL) or np.any(v > 1 + ATOL):
        raise ChainError(f"{what} entries must lie in [0, 1]")
    if abs(v.sum() - 1.0) > ATOL:
        raise ChainError(f"{what} must sum to 1 within {ATOL}, got {v.sum()!r}")
    return v


@dataclass(frozen=True)
class FiniteChain:
    """Finite-state chain: transition matrix P, state labels, initial law."""

    P: np.ndarray
    states: tuple = ()
    initial: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ChainError(f"P must be a square matrix, got shape {P.shape}")
        if np.any(P < -ATOL) or np.any(P > 1 + ATOL):
            raise ChainError("P entries must lie in [0, 1]")
        rowsums = P.sum(axis=1)
        bad = np.nonzero(np.abs(rowsums - 1.0) > ATOL)[0]
        if bad.size:
            raise ChainError(f"row {bad[0]} of P sums to {rowsums[bad[0]]!r}, not 1")
        object.__setattr__(self, "P", P)
        S = P.shape[0]
        states = tuple(self.states) if self.states else tuple(str(i) for i in range(S))
        if len(states) != S:
            raise ChainError(f"expected {S} state labels, got {len(states)}")
        object.__setattr__(self, "states", states)
        init = self.initial if self.initial is not None else np.full(S, 1.0 / S)
        object.__setattr__(self, "initial", _as_prob_vector(init, S, "initial"))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


def _probe_points(count: int, scale: float = 5.0) -> np.ndarray:
    # fixed probe grid so constructor checks are deterministic
    g = philox_generator(0x50524F42, 0)
    return np.concatenate([np.linspace(-scale, scale, count // 2),
                           g.normal(0.0, scale, count - count // 2)])


@dataclass(frozen=True)
class AR1Model:
    """AR(1) process on R^k: X_{t+1} = H(X_t) + Z_t, Z_t ~ N(0, noise_std^2 I)."""

    H: Callable[[np.ndarray], np.ndarray]
    H_bound: float
    noise_std: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.H_bound < 0 or not math.isfinite(self.H_bound):
            raise ChainError("H_bound must be finite and nonnegative")
        if self.noise_std <= 0:
            raise ChainError("noise_std must be positive")
        probes = _probe_points(64)
        for p in probes:
            x = np.full(self.dim, p)
            val = np.asarray(self.H(x), dtype=float)
            if np.max(np.abs(val)) > self.H_bound + 1e-9:
                raise ChainError(
                    f"|H| exceeds declared bound {self.H_bound} at probe {p!r}")


@dataclass(frozen=True)
class ARCHModel:
    """Scalar ARCH process: X_{t+1} = H(X_t) + G(X_t) Z_{t+1}, Z ~ N(0, sigma^2).

    Requires ``|H| <= b`` and ``0 < a <= |G| <= c``; those bounds drive the
    piecewise-Gaussian envelopes of the transition density.
    """

    H: Callable[[float], float]
    G: Callable[[float], float]
    a: float
    b: float
    c: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ChainError("lower bound a on |G| must be positive")
        if not (math.isfinite(self.b) and math.isfinite(self.c)):
            raise ChainError("b and c must be finite")
        if self.sigma <= 0:
            raise ChainError("sigma must be positive")
        for p in _probe_points(64):
            h, g = float(self.H(p)), float(self.G(p))
            if abs(h) > self.b + 1e-9:
                raise ChainError(f"|H| exceeds b={self.b} at probe {p!r}")
            if not (self.a - 1e-9 <= abs(g) <= self.c + 1e-9):
                raise ChainError(f"|G| leaves [{self.a}, {self.c}] at probe {p!r}")

    def density_profile(self, x: float, y) -> np.ndarray:
        """Transition density profile with constant prefactor 1/(2 pi sigma^2).

        This is the quantity the envelopes g_m, g_M bracket pointwise.
        """
        y = np.asarray(y, dtype=float)
        h, g = float(self.H(x)), float(self.G(x))
        return np.exp(-((y - h) ** 2) / (2.0 * self.sigma**2 * g**2)) / (
            2.0 * math.pi * self.sigma**2)


ChainModel = Union[FiniteChain, AR1Model, ARCHModel]


@dataclass(frozen=True)
class ErgodicityConstants:
    """Every chain constant the tail bounds consume.

    rho/L certify uniform ergodicity (Dobrushin construction gives L = 1),
    lam is the second-largest eigenvalue modulus, (delta_m, mu) the order-1
    Doeblin minorization, (delta_M, nu) the majorization, t_mix the 1/4
    mixing time.
    """

    pi: np.ndarray
    rho: float
    L: float
    lam: float
    delta_m: float
    mu: np.ndarray
    delta_M: float
    nu: np.ndarray
    t_mix: int
    m: int = 1
    rho_source: str = "dobrushin"


@dataclass(frozen=True)
class ChainPath:
    """One simulated trajectory X_1..X_n with its seed provenance.

    ``values`` holds state indices for finite chains, floats for ARCH, and
    (n, k) arrays for AR(1). The path is a pure function of
    (model, n, seed, stream, initial).
    """

    values: np.ndarray
    seed: int
    stream: int
    model: ChainModel
    initial_spec: object
    initial_law: Optional[np.ndarray] = None  # resolved law of X_1, finite chains
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)


def stationary_distribution(chain: FiniteChain) -> np.ndarray:
    """Invariant distribution pi with pi P = pi, requiring P primitive.

    Irreducibility and aperiodicity are certified by finding a power
    P^t (t <= S^2) with all entries positive; the error names the first
    power that still has zeros when none exists.
    """
    P = chain.P
    S = chain.n_states
    power = np.eye(S)
    ok = False
    for t in range(1, S * S + 1):
        power = power @ P
        if np.all(power > 0):
            ok = True
            break
    if not ok:
        zeros = np.argwhere(power == 0)
        raise ChainError(
            f"chain is not irreducible+aperiodic: P^{S * S} still has "
            f"{len(zeros)} zero entries (first at {tuple(zeros[0])})")

    # replace one balance equation by the normalization constraint
    A = P.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    # one step of power refinement knocks the residual to machine precision
    for _ in range(4):
        if np.max(np.abs(pi @ P - pi)) <= ATOL:
            break
        pi = pi @ P
        pi = pi / pi.sum()
    resid = np.max(np.abs(pi @ P - pi))
    if resid > ATOL:
        raise ChainError(f"stationary solve residual {resid!r} exceeds {ATOL}")
    return pi


def dobrushin_coefficient(P: np.ndarray) -> float:
    """sup over state pairs of the total variation between transition rows."""
    diffs = P[:, None, :] - P[None, :, :]
    return 0.5 * float(np.max(np.abs(diffs).sum(axis=2)))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def ergodicity_constants(chain: FiniteChain, max_tmix: int = 10_000) -> ErgodicityConstants:
    """Compute (pi, rho, L, lambda, delta_m, mu, delta_M, nu, t_mix) exactly.

    rho is the Dobrushin contraction coefficient, which certifies
    sup_x TV(P^t(x,.), pi) <= rho^t, i.e. L = 1. The minorization comes from
    column minima of P (order m = 1) and the majorization from column maxima.
    """
    P = chain.P
    pi = stationary_distribution(chain)

    rho = dobrushin_coefficient(P)
    if rho >= 1.0:
        raise ChainError(
            "Dobrushin coefficient of P equals 1; supply a power P^m of the "
            "transition matrix whose rows overlap instead")

    eigvals = np.linalg.eigvals(P)
    mods = np.sort(np.abs(eigvals))[::-1]
    lam = float(mods[1]) if len(mods) > 1 else 0.0
    lam = min(lam, 1.0)

    col_min = P.min(axis=0)
    delta_m = float(col_min.sum())
    if delta_m <= 0.0:
        raise ChainError(
            "minorization failure: every column of P must have a positive "
            "minimum for an order-1 Doeblin split (pre-power the chain)")
    mu = col_min / delta_m

    col_max = P.max(axis=0)
    delta_M = float(col_max.sum())
    nu = col_max / delta_M

    power = np.eye(chain.n_states)
    t_mix = None
    for t in range(max_tmix + 1):
        sup_tv = 0.5 * np.max(np.abs(power - pi[None, :]).sum(axis=1))
        if sup_tv < 0.25:
            t_mix = t
            break
        power = power @ P
    if t_mix is None:
        raise ChainError(f"mixing time exceeds {max_tmix}")

    return ErgodicityConstants(pi=pi, rho=rho, L=1.0, lam=lam, delta_m=delta_m,
                               mu=mu, delta_M=delta_M, nu=nu, t_mix=t_mix)


def _sample_categorical(cum: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF draw; cum is the cumulative law, u uniform in [0,1)."""
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, len(cum) - 1)


def _resolve_initial_law(chain: FiniteChain, initial) -> np.ndarray:
    if isinstance(initial, str):
        if initial == "stationary":
            return stationary_distribution(chain)
        if initial == "model":
            return chain.initial
        raise ChainError(f"unknown initial spec {initial!r}")
    return _as_prob_vector(initial, chain.n_states, "initial law")


def simulate(model: ChainModel, n: int, seed: int, initial="stationary",
             stream: int = 0) -> ChainPath:
    """Simulate a trajectory X_1..X_n; bit-reproducible in (model, n, seed, stream, initial).

    ``initial`` is "stationary", "model" (the model's own initial law), an
    explicit law vector (finite chains), or an explicit start value
    (continuous models). A stationary start for AR(1)/ARCH has no closed
    form; it is approximated by a burn-in of ceil(20/(1 - lam_hat)) steps
    with lam_hat estimated from pilot lag-1 autocorrelation, and flagged as
    approximate in the path metadata.
    """
    if n < 2:
        raise ChainError(f"path length must be >= 2, got {n}")
    gen = philox_generator(seed, stream)
    meta: dict = {}

    if isinstance(model, FiniteChain):
        law = _resolve_initial_law(model, initial)
        uniforms = gen.random(n)
        cum_rows = np.cumsum(model.P, axis=1)
        values = np.empty(n, dtype=np.int64)
        values[0] = _sample_categorical(np.cumsum(law), uniforms[0])
        for t in range(1, n):
            values[t] = _sample_categorical(cum_rows[values[t - 1]], uniforms[t])
        return ChainPath(values=values, seed=seed, stream=stream, model=model,
                         initial_spec=initial, initial_law=law, meta=meta)

    if isinstance(model, AR1Model):
        step = lambda x, z: np.asarray(model.H(x), dtype=float) + z  # noqa: E731
        x0 = np.zeros(model.dim)
        draw = lambda size: gen.standard_normal((size, model.dim)) * model.noise_std  # noqa: E731
    elif isinstance(model, ARCHModel):
        step = lambda x, z: float(model.H(x)) + float(model.G(x)) * z  # noqa: E731
        x0 = 0.0
        draw = lambda size: gen.standard_normal(size) * model.sigma  # noqa: E731
    else:
        raise ChainError(f"unknown model type {type(model).__name__}")

    if isinstance(initial, str) and initial in ("stationary", "model"):
        x0, burn_meta = _burn_in_start(model, step, draw, x0)
        meta.update(burn_meta)
    else:
        x0 = np.asarray(initial, dtype=float) if isinstance(model, AR1Model) else float(initial)

    noise = draw(n - 1)
    if isinstance(model, AR1Model):
        values = np.empty((n, model.dim))
    else:
        values = np.empty(n)
    values[0] = x0
    for t in range(1, n):
        values[t] = step(values[t - 1], noise[t - 1])
    return ChainPath(values=values, seed=seed, stream=stream, model=model,
                     initial_spec=initial, meta=meta)


def _burn_in_start(model, step, draw, x0):
    """Approximate stationary start: pilot run, lag-1 autocorrelation, burn-in."""
    pilot_len = 512
    noise = draw(pilot_len)
    x = x0
    pilot = np.empty(pilot_len)
    for t in range(pilot_len):
        x = step(x, noise[t])
        pilot[t] = np.asarray(x, dtype=float).ravel()[0]
    tail = pilot[pilot_len // 2:]
    centered = tail - tail.mean()
    denom = float(centered @ centered)
    lam_hat = 0.0 if denom <= 0 else abs(float(centered[:-1] @ centered[1:]) / denom)
    lam_hat = min(lam_hat, 0.95)
    burn = int(math.ceil(20.0 / (1.0 - lam_hat)))
    noise = draw(burn)
    for t in range(burn):
        x = step(x, noise[t])
    return x, {"stationary_start": "approximate-burnin",
               "burn_in": burn, "lambda_hat": lam_hat}


def simulate_finite_batch(chain: FiniteChain, n: int, seed: int,
                          streams: Sequence[int], initial="stationary") -> np.ndarray:
    """Simulate one finite-chain path per stream, vectorized across streams.

    Produces exactly the same bits as calling :func:`simulate` once per
    stream; the step recursion is shared, the uniforms are not.
    """
    if n < 2:
        raise ChainError(f"path length must be >= 2, got {n}")
    law = _resolve_initial_law(chain, initial)
    R = len(streams)
    uniforms = np.empty((R, n))
    for r, s in enumerate(streams):
        uniforms[r] = philox_generator(seed, s).random(n)
    cum_rows = np.cumsum(chain.P, axis=1)
    cum_init = np.cumsum(law)
    S = chain.n_states
    paths = np.empty((R, n), dtype=np.int64)
    paths[:, 0] = np.minimum(
        np.searchsorted(cum_init, uniforms[:, 0], side="right"), S - 1)
    for t in range(1, n):
        rows = cum_rows[paths[:, t - 1]]
        idx = (uniforms[:, t][:, None] >= rows).sum(axis=1)
        paths[:, t] = np.minimum(idx, S - 1)
    return paths


@dataclass(frozen=True)
class ArchEnvelopes:
    """Piecewise-Gaussian envelopes of the ARCH transition density profile."""

    g_m: Callable[[np.ndarray], np.ndarray]
    g_M: Callable[[np.ndarray], np.ndarray]
    delta_m: float
    delta_M: float


def arch_envelopes(model: ARCHModel, probe_grid: int = 201) -> ArchEnvelopes:
    """Lower/upper envelopes g_m <= p(x, .) <= g_M and their L1 masses.

    g_m flattens to exp(-2 b^2 / (sigma^2 a^2)) on |y| <= b and decays with
    the widest-exponent Gaussian outside; g_M is 1 on |y| <= b with the
    narrowest-exponent decay outside. delta_m = ||g_m||_1 and
    delta_M = ||g_M||_1 come from adaptive quadrature at relative 1e-8.
    The envelope property is verified on a deterministic probe grid.
    """
    from scipy.integrate import quad

    a, b, c, sigma = model.a, model.b, model.c, model.sigma
    pref = 1.0 / (2.0 * math.pi * sigma**2)

    def g_m(y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        lo, mid, hi = y < -b, np.abs(y) <= b, y > b
        out[lo] = np.exp(-((y[lo] - b) ** 2) / (2.0 * sigma**2 * a**2))
        out[mid] = math.exp(-2.0 * b**2 / (sigma**2 * a**2))
        out[hi] = np.exp(-((y[hi] + b) ** 2) / (2.0 * sigma**2 * a**2))
        return pref * out

    def g_M(y):
        y = np.asarray(y, dtype=float)
        out = np.ones_like(y)
        lo, hi = y < -b, y > b
        out[lo] = np.exp(-((y[lo] + b) ** 2) / (2.0 * sigma**2 * c**2))
        out[hi] = np.exp(-((y[hi] - b) ** 2) / (2.0 * sigma**2 * c**2))
        return pref * out

    def mass(g, width):
        span = b + 12.0 * width * sigma
        val, err = quad(lambda t: float(g(np.array([t]))[0]), -span, span,
                        epsabs=0.0, epsrel=1e-10, limit=400)
        if not math.isfinite(val) or (val > 0 and err / val > 1e-8):
            raise ChainError("envelope quadrature did not converge")
        return val

    delta_m = mass(g_m, a)
    delta_M = mass(g_M, c)

    ys = np.linspace(-b - 8 * sigma * c, b + 8 * sigma * c, probe_grid)
    xs = _probe_points(32)
    for x in xs:
        p = model.density_profile(float(x), ys)
        if np.any(g_m(ys) > p + 1e-12) or np.any(g_M(ys) < p - 1e-12):
            raise ChainError(f"envelope violated at probe x={x!r}")
    return ArchEnvelopes(g_m=g_m, g_M=g_M, delta_m=delta_m, delta_M=delta_M)
