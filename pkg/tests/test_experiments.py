import numpy as np
import pytest

from ustatlab import (
    ExperimentPlan,
    ergodicity_constants,
    identity_suite,
    rate_experiment,
    regeneration_suite,
    tail_experiment,
)
from ustatlab.experiments import ExperimentError, replicate_ustat_values
from ustatlab.kernels import ProductKernel, TableKernel, kernel_family, weighted_kernel


def ff(n):
    return kernel_family(ProductKernel(f=np.array([1.0, -2.0])), n)


class TestReplication:
    def test_thread_count_does_not_change_values(self, two_state):
        kw = dict(chain=two_state, kernel=ff(48), n=48, replicates=150, seed=11,
                  centering="joint-expectation")
        v1 = replicate_ustat_values(**kw, threads=1)
        v3 = replicate_ustat_values(**kw, threads=3)
        v8 = replicate_ustat_values(**kw, threads=8)
        assert np.array_equal(v1, v3) and np.array_equal(v1, v8)

    def test_matches_single_path_ustat(self, two_state):
        from ustatlab import ChainPath, simulate, u_stat
        from ustatlab.rng import replicate_stream
        n = 20
        values = replicate_ustat_values(two_state, ff(n), n, 5, seed=3,
                                        centering="joint-expectation")
        for r in range(5):
            path = simulate(two_state, n, 3, initial="stationary",
                            stream=replicate_stream(n, r))
            res = u_stat(path, ff(n), centering="joint-expectation")
            assert values[r] == pytest.approx(res.value, rel=1e-12)


class TestTailExperiment:
    def make_plan(self, chain, kernel, **kw):
        base = dict(chain=chain, kernel=kernel, statistic="tail",
                    n_grid=(32, 64), replicates=150, seed=5,
                    u_grid=(2.0, 3.0, 4.0, 5.0), threads=2)
        base.update(kw)
        return ExperimentPlan(**base)

    def test_zero_kernel_all_zero(self, two_state):
        plan = self.make_plan(two_state, kernel_family(TableKernel(np.zeros((2, 2))), 8))
        rep = tail_experiment(plan)
        for cell in rep.summary["cells"]:
            if not cell.get("skipped"):
                assert cell["quantile"] == 0.0
                assert cell["ratio_T1a"] == 0.0

    def test_quantiles_nondecreasing_in_u(self, two_state):
        rep = tail_experiment(self.make_plan(two_state, ff(8)))
        for n in (32, 64):
            qs = [c["quantile"] for c in rep.summary["cells"]
                  if c["n"] == n and not c.get("skipped")]
            assert all(b >= a - 1e-12 for a, b in zip(qs, qs[1:]))

    def test_calibrated_fit_cells_covered(self, two_state):
        rep = tail_experiment(self.make_plan(two_state, ff(8)))
        assert rep.summary["kappa_source"] == "calibrated"
        for cell in rep.summary["cells"]:
            if not cell.get("skipped"):
                for variant in ("T1a", "T1b", "T2"):
                    assert cell[f"ratio_{variant}"] <= 1.0 + 1e-9

    def test_holdout_coverage_within_five_percent(self, two_state):
        plan = self.make_plan(two_state, ff(8), u_grid=(2.0, 3.0, 4.0, 5.0, 6.0),
                              holdout_u=4.0, replicates=300)
        rep = tail_experiment(plan)
        held = [c for c in rep.summary["cells"] if c.get("held_out")]
        assert held
        for cell in held:
            assert cell["ratio_T1b"] <= 1.05
            assert cell["ratio_T2"] <= 1.05

    def test_supplied_kappa_respected(self, two_state):
        rep = tail_experiment(self.make_plan(two_state, ff(8), kappa=2.5))
        assert rep.summary["kappa"] == {"T1a": 2.5, "T1b": 2.5, "T2": 2.5}
        assert rep.summary["kappa_source"] == "supplied"

    def test_degenerate_levels_marked_and_all_degenerate_rejected(self, two_state):
        rep = tail_experiment(self.make_plan(two_state, ff(8),
                                             u_grid=(0.5, 3.0)))
        assert any(c.get("skipped") for c in rep.summary["cells"])
        with pytest.raises(ExperimentError, match="degenerate"):
            tail_experiment(self.make_plan(two_state, ff(8), u_grid=(0.1, 0.2)))

    def test_too_few_replicates(self, two_state):
        with pytest.raises(ExperimentError, match="replicates"):
            tail_experiment(self.make_plan(two_state, ff(8), replicates=50))

    def test_byte_identical_reruns_any_threads(self, two_state):
        plan1 = self.make_plan(two_state, ff(8), threads=1)
        plan2 = self.make_plan(two_state, ff(8), threads=4)
        r1, r2 = tail_experiment(plan1), tail_experiment(plan2)
        assert r1.raw_csv() == r2.raw_csv()
        assert r1.quantile_csv() == r2.quantile_csv()
        assert r1.summary_json() == r2.summary_json()


class TestRateExperiment:
    def test_needs_three_horizons(self, two_state):
        plan = ExperimentPlan(chain=two_state, kernel=weighted_kernel(ff(64), "inverse-gap"),
                              statistic="rate", n_grid=(32, 64), replicates=100, seed=1)
        with pytest.raises(ExperimentError, match="3 horizons"):
            rate_experiment(plan)

    def test_zero_kernel_degenerate(self, two_state):
        zero = weighted_kernel(kernel_family(TableKernel(np.zeros((2, 2))), 64),
                               "inverse-gap")
        plan = ExperimentPlan(chain=two_state, kernel=zero, statistic="rate",
                              n_grid=(16, 32, 64), replicates=100, seed=1)
        with pytest.raises(ExperimentError, match="degenerate"):
            rate_experiment(plan)

    def test_weighted_slope_below_unweighted(self, two_state):
        plan = ExperimentPlan(chain=two_state,
                              kernel=weighted_kernel(ff(128), "inverse-gap"),
                              statistic="rate", n_grid=(32, 64, 128),
                              replicates=300, seed=7, threads=2)
        rep = rate_experiment(plan)
        assert rep.summary["weighted_below_unweighted"]
        assert rep.summary["separation"] > 0.2

    def test_statistic_field_checked(self, two_state):
        plan = ExperimentPlan(chain=two_state, kernel=ff(16), statistic="tail",
                              n_grid=(16, 32, 64), replicates=100, seed=1)
        with pytest.raises(ExperimentError, match="statistic"):
            rate_experiment(plan)


class TestIdentitySuite:
    def test_tolerances_hold(self, two_state):
        rep = identity_suite(two_state, ff(30), n=30, t_n=8, replicates=40, seed=3)
        s = rep.summary
        assert s["decomposition_ok"] and s["max_decomposition_residual"] <= 1e-9
        assert s["martingale_ok"] and s["max_martingale_residual"] <= 1e-10
        assert s["remainder_ok"] and s["max_realized_R"] <= s["remainder_bound"]
        assert s["ok"]

    def test_nonstationary_uses_general_bound(self, two_state):
        rep = identity_suite(two_state, ff(20), n=20, t_n=5, replicates=20,
                             seed=4, initial="model")
        assert rep.summary["remainder_variant"] == "general"
        assert rep.summary["ok"]


class TestRegenerationSuite:
    def test_two_state_targets(self, two_state, two_state_constants):
        rep = regeneration_suite(two_state, two_state_constants, steps=120_000,
                                 seed=9)
        s = rep.summary
        assert s["block_mean_target"] == pytest.approx(20 / 9)
        assert s["mean_T_target"] == pytest.approx(10 / 3)
        assert s["block_mean_ok"] and s["mean_T_ok"] and s["ok"]
        assert s["tau_hat"] > 0

    def test_full_minorization_constant_gaps(self, iid_coin):
        cst = ergodicity_constants(iid_coin)
        rep = regeneration_suite(iid_coin, cst, steps=5000, seed=2)
        assert rep.summary["mean_T"] == 1.0
        assert rep.summary["tau_hat"] == pytest.approx(1 / np.log(2), abs=1e-6)
