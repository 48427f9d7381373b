import math

import numpy as np
import pytest

import nesteb.kernel
from nesteb.data import Bandwidths, DensityEval, kfold_split, validate_sample
from nesteb.errors import AllCellsDegenerate, DegenerateWeights, EmptyMonteCarlo
from nesteb.estimators import nest_estimates
from nesteb.kernel import KernelContext
from nesteb.priors import NormalPrior
from nesteb.simulation import TwoValueSigma, UniformSigma, draw_scenario, scenario_from_ratio
from nesteb.sure import (
    SureGrid,
    _argmin_cell,
    default_grid,
    sure_compound_cv,
    sure_from_density,
    sure_point,
    sure_unbiasedness_check,
    tune,
    tune_kgroups,
    tune_pooled,
    pooled_grid_for,
)

SQRT_2PI = math.sqrt(2 * math.pi)


def random_sample(n=60, seed=0):
    rng = np.random.default_rng(seed)
    return validate_sample(rng.normal(3.0, 1.0, n), rng.uniform(0.4, 1.6, n))


class TestSurePoint:
    def test_standard_normal_plugin_at_mode(self):
        # analytic Gaussian shape: f=phi(0), f1=0, f2=-phi(0) -> bracket -2
        phi0 = 1.0 / SQRT_2PI
        d = DensityEval(phi0, 0.0, -phi0)
        assert sure_from_density(d, 1.0) == pytest.approx(-1.0, abs=1e-14)

    def test_standard_normal_plugin_at_sqrt2(self):
        x = math.sqrt(2.0)
        phix = math.exp(-x * x / 2) / SQRT_2PI
        d = DensityEval(phix, -x * phix, (x * x - 1) * phix)
        assert sure_from_density(d, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_flat_density_gives_noise_variance(self):
        d = DensityEval(0.25, 0.0, 0.0)
        assert sure_from_density(d, 1.7) == pytest.approx(1.7**2)

    def test_sure_point_uses_context_density(self):
        train = validate_sample([1.0], [2.0])
        ctx = KernelContext(train, Bandwidths(0.5, 0.4))
        # single-kernel closed form at (0, 1): h = 1, f1/f = 1, f2/f = 0
        got = sure_point(ctx, 0.0, 1.0)
        f = math.exp(-0.5) / SQRT_2PI
        f1 = f
        f2 = 0.0
        expect = 1.0 + (2 * f * f2 - f1 * f1) / f**2
        assert got == pytest.approx(expect, rel=1e-12)


class TestCompoundCv:
    def test_two_point_closed_form(self):
        # n=2, K=2: each point scored against the other alone
        s = validate_sample([0.0, 1.0], [1.0, 2.0])
        folds = kfold_split(2, 2, seed=123)
        got = sure_compound_cv(s, Bandwidths(0.5, 0.4), folds)
        assert got == pytest.approx(132.0, rel=1e-12)

    def test_matches_per_fold_context_reference(self):
        s = random_sample(n=30, seed=1)
        folds = kfold_split(30, 5, seed=9)
        bw = Bandwidths(0.5, 0.3)
        total = 0.0
        for g in range(5):
            train = s.subset(folds.complement_of(g))
            ctx = KernelContext(train, bw)
            for i in folds.indices_of(g):
                total += sure_point(ctx, s.x[i], s.sigma[i])
        got = sure_compound_cv(s, bw, folds)
        assert got == pytest.approx(total, rel=1e-11)

    def test_deterministic(self):
        s = random_sample(n=40, seed=2)
        folds = kfold_split(40, 4, seed=5)
        a = sure_compound_cv(s, Bandwidths(0.4, 0.25), folds)
        b = sure_compound_cv(s, Bandwidths(0.4, 0.25), folds)
        assert a == b

    def test_cv_hygiene_held_out_points_invisible(self):
        # moving x_i must not change the score of any point in i's own fold
        s = random_sample(n=24, seed=3)
        folds = kfold_split(24, 4, seed=1)
        bw = Bandwidths(0.5, 0.3)
        i = 7
        g = folds.fold_of[i]
        x2 = s.x.copy()
        x2[i] += 5.0
        s2 = validate_sample(x2, s.sigma)

        def per_point_scores(sample):
            out = np.empty(sample.n)
            for fold in range(4):
                ctx = KernelContext(sample.subset(folds.complement_of(fold)), bw)
                for j in folds.indices_of(fold):
                    out[j] = sure_point(ctx, sample.x[j], sample.sigma[j])
            return out

        a = per_point_scores(s)
        b = per_point_scores(s2)
        same_fold = folds.indices_of(g)
        untouched = same_fold[same_fold != i]
        np.testing.assert_array_equal(a[untouched], b[untouched])
        # and the compound path agrees with the reference on both samples
        assert sure_compound_cv(s, bw, folds) == pytest.approx(a.sum(), rel=1e-11)
        assert sure_compound_cv(s2, bw, folds) == pytest.approx(b.sum(), rel=1e-11)

    def test_degenerate_weights_propagate(self):
        s = validate_sample([0.0, 1.0], [1.0, 100.0])
        folds = kfold_split(2, 2, seed=0)
        with pytest.raises(DegenerateWeights):
            sure_compound_cv(s, Bandwidths(0.5, 0.001), folds)


class TestTune:
    def test_single_cell_grid(self):
        s = random_sample(n=25, seed=4)
        grid = SureGrid((0.5,), (0.3,), k=5, seed=11)
        rep = tune(s, grid)
        assert rep.argmin == Bandwidths(0.5, 0.3)
        folds = kfold_split(25, 5, seed=11)
        assert rep.surface[0, 0] == pytest.approx(sure_compound_cv(s, Bandwidths(0.5, 0.3), folds))
        assert rep.per_point.shape == (25,)
        assert rep.per_point.sum() == pytest.approx(rep.surface[0, 0])

    def test_tune_deterministic(self):
        s = random_sample(n=50, seed=5)
        grid = SureGrid((0.3, 0.6), (0.2, 0.4), k=5, seed=2)
        a = tune(s, grid)
        b = tune(s, grid)
        np.testing.assert_array_equal(a.surface, b.surface)
        assert a.argmin == b.argmin

    def test_argmin_minimizes_penalized_score(self):
        s = random_sample(n=80, seed=6)
        rep = tune(s, default_grid(s, seed=3))
        ok = np.where(rep.degenerate, np.inf, rep.selection)
        i = rep.h_x_values.index(rep.argmin.h_x)
        j = rep.h_sigma_values.index(rep.argmin.h_sigma)
        assert rep.selection[i, j] == ok.min()
        # the penalty is the standard error of the compound sum
        np.testing.assert_allclose(
            rep.selection - rep.surface,
            np.maximum(rep.selection - rep.surface, 0.0),
        )

    def test_plain_argmin_rule_minimizes_raw_surface(self):
        s = random_sample(n=60, seed=14)
        grid = SureGrid((0.3, 0.6, 0.9), (0.2, 0.4), k=5, seed=8)
        rep = tune(s, grid, selection="argmin")
        np.testing.assert_array_equal(rep.selection, rep.surface)
        i = rep.h_x_values.index(rep.argmin.h_x)
        j = rep.h_sigma_values.index(rep.argmin.h_sigma)
        assert rep.surface[i, j] == np.where(rep.degenerate, np.inf, rep.surface).min()
        with pytest.raises(ValueError):
            tune(s, grid, selection="bogus")

    def test_noisy_small_bandwidth_cells_not_selected(self):
        # at tiny bandwidths the criterion is unbiased but wildly dispersed;
        # the one-SE safeguard must keep such cells from winning on noise
        rng = np.random.default_rng(99)
        n = 800
        mu = np.where(rng.random(n) < 0.5, 0.0, 3.0)
        sigma = rng.uniform(0.1, 0.8, n)
        x = mu + sigma * rng.standard_normal(n)
        s = validate_sample(x, sigma)
        rep = tune(s, default_grid(s, seed=11))
        i = rep.h_x_values.index(rep.argmin.h_x)
        j = rep.h_sigma_values.index(rep.argmin.h_sigma)
        se = rep.selection - rep.surface
        assert se[i, j] <= 3.0 * np.median(se)

    def test_tie_break_smallest_h_sigma_then_h_x(self):
        surface = np.array([[5.0, 1.0], [1.0, 7.0]])
        degenerate = np.zeros((2, 2), dtype=bool)
        # ties at (0,1) and (1,0): smallest h_sigma wins -> column 0 -> (1,0)
        assert _argmin_cell(surface, degenerate) == (1, 0)
        # degenerate cells are excluded
        degenerate[1, 0] = True
        assert _argmin_cell(surface, degenerate) == (0, 1)

    def test_monotone_scores_select_smallest_h_x(self):
        # strictly increasing in h_x within each h_sigma column
        surface = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert _argmin_cell(surface, np.zeros((3, 2), dtype=bool)) == (0, 0)

    def test_all_cells_degenerate_raises(self):
        s = validate_sample([0.0, 1.0], [1.0, 100.0])
        grid = SureGrid((0.5,), (0.001,), k=2, seed=0)
        with pytest.raises(AllCellsDegenerate):
            tune(s, grid)

    def test_floored_cells_marked_degenerate(self):
        # widely separated x with a tiny h_x floors most held-out densities
        s = validate_sample([0.0, 1e6, 2e6, 3e6, 4e6, 5e6], np.ones(6))
        grid = SureGrid((0.001,), (0.5,), k=2, seed=1)
        with pytest.raises(AllCellsDegenerate):
            tune(s, grid)

    def test_blocking_does_not_change_results(self, monkeypatch):
        s = random_sample(n=40, seed=7)
        grid = SureGrid((0.4, 0.8), (0.3,), k=4, seed=6)
        full = tune(s, grid)
        monkeypatch.setattr("nesteb.sure._BLOCK_ELEMS", 64)
        small = tune(s, grid)
        np.testing.assert_array_equal(full.surface, small.surface)
        np.testing.assert_array_equal(full.selection, small.selection)
        np.testing.assert_array_equal(full.per_point, small.per_point)

    def test_sure_selection_close_to_true_risk_optimum(self):
        # true-risk oracle: exhaustive search using the known means
        sc = scenario_from_ratio(NormalPrior(3.0, 1.0), 9.6 / 10.6, n=1000, reps=1, seed=42)
        s = draw_scenario(sc, 0)
        grid = default_grid(s, seed=7)
        rep = tune(s, grid)
        best = math.inf
        for hx in grid.h_x_values:
            for hs in grid.h_sigma_values:
                mu = nest_estimates(s, Bandwidths(hx, hs))
                best = min(best, float(np.mean((mu - s.mu_true) ** 2)))
        mu_sure = nest_estimates(s, rep.argmin)
        mse_sure = float(np.mean((mu_sure - s.mu_true) ** 2))
        assert mse_sure <= 1.10 * best


class TestTunePooled:
    def test_selects_from_grid_and_is_deterministic(self):
        s = random_sample(n=120, seed=8)
        folds = kfold_split(120, 10, seed=4)
        rep = tune_pooled(s.x, s.sigma, pooled_grid_for(s.x), folds)
        assert rep.best_h in rep.h_values
        rep2 = tune_pooled(s.x, s.sigma, pooled_grid_for(s.x), folds)
        assert rep.best_h == rep2.best_h
        np.testing.assert_array_equal(rep.surface, rep2.surface)

    def test_matches_nest_surface_on_unit_sigmas(self):
        # pooled machinery is the weighted KDE with all sigmas pinned to 1
        rng = np.random.default_rng(9)
        x = rng.normal(size=50)
        s_unit = validate_sample(x, np.ones(50))
        folds = kfold_split(50, 5, seed=3)
        pooled = tune_pooled(x, np.ones(50), (0.3, 0.6), folds)
        for idx, h in enumerate((0.3, 0.6)):
            ref = sure_compound_cv(s_unit, Bandwidths(h, 1.0), folds)
            assert pooled.surface[idx] == pytest.approx(ref, rel=1e-12)

    def test_kgroups_tuner_returns_one_h_per_group(self):
        s = random_sample(n=90, seed=10)
        hs = tune_kgroups(s, 3, folds_k=5, seed=2)
        assert len(hs) == 3
        assert all(h > 0 for h in hs)


class TestUnbiasedness:
    def test_empty_monte_carlo(self):
        with pytest.raises(EmptyMonteCarlo):
            sure_unbiasedness_check(
                NormalPrior(3, 1), UniformSigma(0.1, 1.0), Bandwidths(0.5, 0.2), 100, 0, 1
            )

    def test_mean_sure_matches_monte_carlo_risk(self):
        law = UniformSigma(0.1, 1.68)
        bw = Bandwidths(0.5, 0.3 * law.sd())
        res = sure_unbiasedness_check(NormalPrior(3, 1), law, bw, 500, 20000, seed=7)
        assert res.gap <= 3.0 * res.se

    def test_fixed_sigma_law(self):
        law = TwoValueSigma(1.0, 1.0, 1.0)
        res = sure_unbiasedness_check(NormalPrior(3, 1), law, Bandwidths(0.5, 0.3), 500, 20000, seed=3)
        assert res.gap <= 3.0 * res.se

    def test_se_shrinks_like_sqrt_two(self):
        # the sd of the pointwise gap is itself estimated, so allow slack
        law = TwoValueSigma(1.0, 1.0, 1.0)
        bw = Bandwidths(0.5, 0.3)
        a = sure_unbiasedness_check(NormalPrior(3, 1), law, bw, 300, 10000, seed=3)
        b = sure_unbiasedness_check(NormalPrior(3, 1), law, bw, 300, 20000, seed=3)
        assert b.se / a.se == pytest.approx(1 / math.sqrt(2), abs=0.08)


class TestGridValidation:
    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            SureGrid((), (0.1,))
        with pytest.raises(ValueError):
            SureGrid((0.2, 0.1), (0.1,))
        with pytest.raises(ValueError):
            SureGrid((0.1,), (-0.1,))
        with pytest.raises(ValueError):
            SureGrid((0.1,), (0.1,), k=1)

    def test_default_grid_scales_with_sigma_spread(self):
        s = random_sample(n=50, seed=12)
        g = default_grid(s)
        assert g.h_sigma_values[-1] == pytest.approx(float(np.std(s.sigma)))
        assert g.h_x_values == tuple(np.round(np.arange(1, 11) * 0.1, 10))

    def test_default_grid_homoscedastic_fallback(self):
        s = validate_sample([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
        g = default_grid(s)
        assert g.h_sigma_values[-1] == pytest.approx(1.0)
