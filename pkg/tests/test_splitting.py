import math

import numpy as np
import pytest

from ustatlab import (
    FiniteChain,
    SplitError,
    block_sums,
    ergodicity_constants,
    orlicz_norm_estimate,
    regeneration_times,
    split_simulate,
)
from ustatlab.splitting import block_mean_estimate, residual_kernel

from conftest import random_mixing_chain


class TestConstruction:
    def test_two_state_residual_is_pure_stay(self, two_state, two_state_constants):
        # (P - 0.3 mu) / 0.7 row arithmetic gives the identity matrix
        resid = residual_kernel(two_state, two_state_constants.delta_m,
                                two_state_constants.mu)
        assert resid == pytest.approx(np.eye(2), abs=1e-14)

    def test_mixture_reconstruction_exact(self):
        rng = np.random.default_rng(44)
        for _ in range(25):
            ch = random_mixing_chain(rng)
            cst = ergodicity_constants(ch)
            resid = residual_kernel(ch, cst.delta_m, cst.mu)
            rebuilt = cst.delta_m * cst.mu[None, :] + (1 - cst.delta_m) * resid
            assert np.max(np.abs(rebuilt - ch.P)) <= 1e-14

    def test_full_minorization_rings_every_step(self, iid_coin):
        cst = ergodicity_constants(iid_coin)
        assert cst.delta_m == pytest.approx(1.0)
        trace = split_simulate(iid_coin, cst, 500, seed=3)
        assert np.all(trace.bells == 1)
        assert np.all(regeneration_times(trace) == 1)

    def test_invalid_minorization_rejected(self, two_state):
        cst = ergodicity_constants(two_state)
        with pytest.raises(SplitError, match="minorization"):
            residual_kernel(two_state, 0.9, np.array([0.5, 0.5]))
        from dataclasses import replace
        with pytest.raises(SplitError, match="delta_1"):
            split_simulate(two_state, replace(cst, delta_m=0.0), 100, seed=0)

    def test_determinism(self, two_state, two_state_constants):
        a = split_simulate(two_state, two_state_constants, 400, seed=5)
        b = split_simulate(two_state, two_state_constants, 400, seed=5)
        assert np.array_equal(a.path, b.path)
        assert np.array_equal(a.bells, b.bells)

    def test_marginal_law_preserved(self, two_state, two_state_constants):
        # empirical transition frequencies of the split path match P within
        # 3 binomial standard errors per entry
        n = 1_000_000
        trace = split_simulate(two_state, two_state_constants, n, seed=8)
        path = trace.path
        for x in range(2):
            src = path[:-1] == x
            count = int(src.sum())
            for y in range(2):
                freq = np.mean(path[1:][src] == y)
                p = two_state.P[x, y]
                se = math.sqrt(p * (1 - p) / count)
                assert abs(freq - p) <= 3 * se

    def test_bells_independent_of_state(self, two_state, two_state_constants):
        # exogenous bells: ring frequency matches delta_1 regardless of state
        trace = split_simulate(two_state, two_state_constants, 200_000, seed=13)
        for x in range(2):
            sel = trace.path == x
            freq = trace.bells[sel].mean()
            se = math.sqrt(0.3 * 0.7 / sel.sum())
            assert abs(freq - 0.3) <= 3 * se


class TestRegeneration:
    def test_direct_readout(self, two_state, two_state_constants):
        import dataclasses
        trace = split_simulate(two_state, two_state_constants, 10, seed=0)
        trace = dataclasses.replace(
            trace, bells=np.array([0, 0, 1, 0, 1, 0, 0, 0, 1, 0], dtype=np.int8),
            regen_times=np.array([3, 2, 4]), blocks=[(3, 5), (5, 9)])
        assert list(regeneration_times(trace)) == [3, 2, 4]

    def test_no_bell_error(self, two_state, two_state_constants):
        import dataclasses
        trace = split_simulate(two_state, two_state_constants, 10, seed=0)
        trace = dataclasses.replace(trace, regen_times=np.array([], dtype=np.int64))
        with pytest.raises(SplitError, match="longer"):
            regeneration_times(trace)

    def test_geometric_mean_within_three_se(self, two_state, two_state_constants):
        # ~1e5 regenerations of geometric(0.3) gaps
        n = 340_000
        trace = split_simulate(two_state, two_state_constants, n, seed=21)
        times = regeneration_times(trace)[1:].astype(float)
        assert len(times) > 90_000
        se = times.std(ddof=1) / math.sqrt(len(times))
        assert abs(times.mean() - 1 / 0.3) <= 3 * se

    def test_tail_is_log_linear_with_geometric_slope(self, two_state,
                                                     two_state_constants):
        # P(T > t) = (1 - delta_1)^t exactly in this construction
        trace = split_simulate(two_state, two_state_constants, 200_000, seed=2)
        times = regeneration_times(trace)[1:].astype(float)
        ts = np.arange(1, 13)
        logp = np.log(np.array([(times > t).mean() for t in ts]))
        assert np.all(np.diff(logp) < 0)
        slope = np.polyfit(ts, logp, 1)[0]
        assert slope == pytest.approx(math.log(0.7), abs=0.01)


class TestOrlicz:
    def test_constant_sample_closed_form(self):
        est = orlicz_norm_estimate(np.full(2000, 4.0))
        assert est.tau_hat == pytest.approx(4.0 / math.log(2), abs=1e-6)
        assert est.sample_size == 2000

    def test_estimate_defines_unit_excess(self):
        rng = np.random.default_rng(9)
        t = rng.geometric(0.4, size=5000)
        est = orlicz_norm_estimate(t.astype(float))
        mean_exp = np.exp(t / est.tau_hat).mean()
        assert mean_exp == pytest.approx(2.0, abs=1e-4)

    def test_geometric_mgf_oracle(self):
        # solve p e^s / (1 - (1-p) e^s) = 2 for the geometric psi_1 norm
        p = 0.3
        target = 1.0 / math.log(2.0 / (2.0 - p))
        rng = np.random.default_rng(123)
        t = rng.geometric(p, size=400_000).astype(float)
        est = orlicz_norm_estimate(t)
        assert est.tau_hat == pytest.approx(target, rel=0.02)

    def test_outlier_monotonicity(self):
        rng = np.random.default_rng(7)
        base = rng.geometric(0.3, size=3000).astype(float)
        with_outlier = base.copy()
        with_outlier[0] = 100 * np.median(base)
        assert (orlicz_norm_estimate(with_outlier).tau_hat
                > orlicz_norm_estimate(base).tau_hat)

    def test_min_sample_size(self):
        with pytest.raises(SplitError, match="samples"):
            orlicz_norm_estimate(np.ones(10))

    def test_estimate_stays_inside_bracket(self):
        rng = np.random.default_rng(15)
        for p in (0.1, 0.5, 0.9):
            t = rng.geometric(p, size=2000).astype(float)
            est = orlicz_norm_estimate(t)
            lo, hi = est.bracket
            assert lo <= est.tau_hat <= hi
            assert est.bracket == (t.max() / 50.0, 50.0 * t.max())

    def test_zero_samples_rejected(self):
        with pytest.raises(SplitError, match="zero"):
            orlicz_norm_estimate(np.zeros(2000))


class TestBlockSums:
    def test_unit_function_gives_block_lengths(self, two_state, two_state_constants):
        trace = split_simulate(two_state, two_state_constants, 60_000, seed=4)
        z = block_sums(trace, np.ones(2))
        lengths = np.diff([b[0] for b in trace.blocks] + [trace.blocks[-1][1]])
        assert np.array_equal(z, lengths.astype(float))
        se = z.std(ddof=1) / math.sqrt(len(z))
        assert abs(z.mean() - 1 / 0.3) <= 3 * se

    def test_zero_function(self, two_state, two_state_constants):
        trace = split_simulate(two_state, two_state_constants, 5000, seed=1)
        assert np.all(block_sums(trace, np.zeros(2)) == 0.0)

    def test_renewal_identity_20_over_9(self, two_state, two_state_constants):
        # E[Z] = (1/delta_1) pi(f) with f = 1{state 0}: (1/0.3)(2/3) = 20/9
        n = 340_000
        trace = split_simulate(two_state, two_state_constants, n, seed=6)
        mean, se = block_mean_estimate(trace, np.array([1.0, 0.0]))
        assert len(trace.blocks) > 90_000
        assert abs(mean - 20 / 9) <= 3 * se

    def test_block_independence(self, two_state, two_state_constants):
        # lag-1 sample correlation of Z within 3/sqrt(N) of zero
        trace = split_simulate(two_state, two_state_constants, 200_000, seed=14)
        z = block_sums(trace, np.array([1.0, 0.0]))
        zc = z - z.mean()
        corr = float(zc[:-1] @ zc[1:] / math.sqrt((zc[:-1] @ zc[:-1]) * (zc[1:] @ zc[1:])))
        assert abs(corr) <= 3 / math.sqrt(len(z) - 1)

    def test_needs_two_blocks(self, two_state, two_state_constants):
        import dataclasses
        trace = split_simulate(two_state, two_state_constants, 50, seed=0)
        trace = dataclasses.replace(trace, blocks=trace.blocks[:1])
        with pytest.raises(SplitError, match="blocks"):
            block_sums(trace, np.ones(2))

    def test_callable_function(self, two_state, two_state_constants):
        trace = split_simulate(two_state, two_state_constants, 5000, seed=2)
        z_vec = block_sums(trace, np.array([1.0, 0.0]))
        z_fn = block_sums(trace, lambda s: 1.0 if s == 0 else 0.0)
        assert np.array_equal(z_vec, z_fn)
