import math

import numpy as np
import pytest

from dyadnet.errors import (
    ConfigError,
    DomainError,
    OptimizationError,
    RankDeficiencyError,
    SeparationError,
    SeparationWarning,
)
from dyadnet.estimator import (
    ArrayBlockSource,
    MATERIALIZE_GUARD,
    OptimizerConfig,
    fit_by_country,
    fit_newton,
    fit_streaming,
    loglik_and_gradient,
    marginal_effects_at_mean,
    materialize,
    standard_errors,
)
from dyadnet.features import BlockSource, FeatureContext, FeatureManifest, FeatureSpec, iter_design_blocks
from dyadnet.synth import CountrySpec, SynthConfig, generate
from synth_cases import LEAN_SPEC as LEAN
from synth_cases import balanced_truth


@pytest.fixture(scope="module")
def fitted_case():
    truth, ctx = balanced_truth(n=160, seed=11)
    x, w = materialize(iter_design_blocks(ctx))
    return truth, ctx, x, w


def irls_reference(x, w, iters=60):
    """Independent iteratively-reweighted least-squares implementation."""
    beta = np.zeros(x.shape[1])
    for _ in range(iters):
        eta = x @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        s = np.clip(p * (1 - p), 1e-12, None)
        z = eta + (w - p) / s
        wx = x * s[:, None]
        beta_new = np.linalg.solve(x.T @ wx, wx.T @ z)
        if np.max(np.abs(beta_new - beta)) < 1e-14:
            beta = beta_new
            break
        beta = beta_new
    return beta


class TestLoglikGradient:
    def test_zero_beta_gives_log2(self, rng):
        x = rng.normal(size=(50, 3))
        w = rng.integers(0, 2, 50).astype(float)
        nll, _ = loglik_and_gradient(x, w, np.zeros(3))
        assert nll == pytest.approx(math.log(2.0), abs=1e-15)

    def test_intercept_only_analytic_mle(self):
        x = np.ones((400, 1))
        w = np.zeros(400)
        w[:100] = 1.0  # 25% ones
        beta = np.array([math.log(1.0 / 3.0)])
        _, grad = loglik_and_gradient(x, w, beta)
        assert abs(grad[0]) < 1e-15

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.normal(size=(200, 6))
        w = (rng.random(200) < 0.3).astype(float)
        beta = rng.normal(scale=0.5, size=6)
        _, grad = loglik_and_gradient(x, w, beta)
        h = 1e-6
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            f_plus, _ = loglik_and_gradient(x, w, beta + e)
            f_minus, _ = loglik_and_gradient(x, w, beta - e)
            fd = (f_plus - f_minus) / (2 * h)
            assert abs(grad[k] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_penalized_gradient_matches_finite_differences(self, rng):
        x = rng.normal(size=(80, 3))
        w = (rng.random(80) < 0.5).astype(float)
        beta = rng.normal(size=3)
        _, grad = loglik_and_gradient(x, w, beta, l2_penalty=0.3)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fp, _ = loglik_and_gradient(x, w, beta + e, l2_penalty=0.3)
            fm, _ = loglik_and_gradient(x, w, beta - e, l2_penalty=0.3)
            assert abs(grad[k] - (fp - fm) / (2 * h)) < 1e-6

    def test_saturated_predictor_stays_finite(self):
        x = np.array([[1000.0], [-1000.0]])
        w = np.array([0.0, 1.0])
        nll, grad = loglik_and_gradient(x, w, np.array([1.0]))
        assert np.isfinite(nll) and np.all(np.isfinite(grad))

    def test_width_mismatch(self):
        with pytest.raises(DomainError):
            loglik_and_gradient(np.ones((3, 2)), np.zeros(3), np.zeros(3))


class TestFitNewton:
    def test_intercept_only_closed_form(self):
        x = np.ones((1000, 1))
        w = np.zeros(1000)
        w[:250] = 1.0
        fr = fit_newton(x, w, tol=1e-12)
        assert fr.beta[0] == pytest.approx(math.log(1.0 / 3.0), abs=1e-10)
        assert fr.converged

    def test_duplicated_column_names_both(self, rng):
        x = rng.normal(size=(300, 2))
        x = np.column_stack([x, x[:, 1]])
        w = (rng.random(300) < 0.4).astype(float)
        with pytest.raises(RankDeficiencyError) as err:
            fit_newton(x, w, names=("a", "b", "b_copy"))
        assert "b" in err.value.columns and "b_copy" in err.value.columns

    def test_matches_independent_irls(self, fitted_case):
        _, ctx, x, w = fitted_case
        fr = fit_newton(x, w, tol=1e-12, names=ctx.manifest.names)
        oracle = irls_reference(x, w)
        assert np.max(np.abs(fr.beta - oracle)) < 1e-8

    def test_first_order_condition(self, fitted_case):
        _, _, x, w = fitted_case
        fr = fit_newton(x, w, tol=1e-10)
        _, grad = loglik_and_gradient(x, w, fr.beta)
        assert np.max(np.abs(grad)) < 1e-10

    def test_constant_outcome_is_separation(self):
        x = np.ones((50, 1))
        with pytest.raises(SeparationError):
            fit_newton(x, np.zeros(50))

    def test_affine_invariance(self, rng):
        x = np.column_stack([np.ones(500), rng.normal(size=500), rng.normal(size=500)])
        w = (rng.random(500) < 0.3).astype(float)
        base = fit_newton(x, w, tol=1e-12)
        scaled = x.copy()
        scaled[:, 2] *= 10.0
        other = fit_newton(scaled, w, tol=1e-12)
        assert other.beta[2] == pytest.approx(base.beta[2] / 10.0, abs=1e-8)
        p_base = 1 / (1 + np.exp(-(x @ base.beta)))
        p_other = 1 / (1 + np.exp(-(scaled @ other.beta)))
        assert np.max(np.abs(p_base - p_other)) < 1e-8
        assert np.all((p_base > 0) & (p_base < 1))

    def test_materialization_guard(self):
        x = np.ones((MATERIALIZE_GUARD + 1, 1))
        with pytest.raises(DomainError):
            fit_newton(x, np.zeros(MATERIALIZE_GUARD + 1))


class TestStandardErrors:
    def test_intercept_only_analytic(self):
        n, p = 4000, 0.25
        x = np.ones((n, 1))
        w = np.zeros(n)
        w[: int(n * p)] = 1.0
        fr = fit_newton(x, w, tol=1e-12)
        expected = 1.0 / math.sqrt(n * p * (1 - p))
        assert fr.se[0] == pytest.approx(expected, rel=1e-9)
        src = ArrayBlockSource(x, w)
        se = standard_errors(src, fr.beta)
        assert se[0] == pytest.approx(expected, rel=1e-9)

    def test_streaming_matches_newton(self, fitted_case):
        _, ctx, x, w = fitted_case
        fr = fit_newton(x, w, tol=1e-12)
        se = standard_errors(ArrayBlockSource(x, w), fr.beta)
        assert np.max(np.abs(se - fr.se)) < 1e-6

    def test_doubling_shrinks_by_sqrt2(self, fitted_case):
        _, _, x, w = fitted_case
        fr = fit_newton(x, w, tol=1e-12)
        se1 = standard_errors(ArrayBlockSource(x, w), fr.beta)
        x2, w2 = np.vstack([x, x]), np.concatenate([w, w])
        se2 = standard_errors(ArrayBlockSource(x2, w2), fr.beta)
        assert np.max(np.abs(se2 * math.sqrt(2.0) - se1)) < 1e-9


class TestFitStreaming:
    def test_matches_full_batch_newton_oracle(self, fitted_case):
        truth, ctx, x, w = fitted_case
        oracle = fit_newton(x, w, tol=1e-12, names=ctx.manifest.names)
        fr = fit_streaming(BlockSource(ctx, seed=5), OptimizerConfig(seed=5), names=ctx.manifest.names)
        assert fr.converged
        assert np.max(np.abs(fr.beta - oracle.beta)) < 1e-6
        # Truth recovery within 2 oracle standard errors.
        inside = np.abs(fr.beta - truth.beta) <= 2 * oracle.se
        assert inside.mean() >= 0.9

    def test_streaming_never_beats_newton_optimum(self, fitted_case):
        _, ctx, x, w = fitted_case
        oracle = fit_newton(x, w, tol=1e-12)
        for method in ("newton", "svrg"):
            fr = fit_streaming(
                BlockSource(ctx, seed=5),
                OptimizerConfig(seed=5, method=method, max_epochs=8, learning_rate=0.5, tolerance=1e-12),
            )
            assert fr.avg_nll >= oracle.avg_nll - 1e-12
            losses = np.array(fr.loss_history)
            assert np.all(np.diff(losses) <= 1e-6)  # monotone up to batch noise

    def test_bit_identical_reruns(self, fitted_case):
        _, ctx, _, _ = fitted_case
        cfg = OptimizerConfig(seed=7)
        a = fit_streaming(BlockSource(ctx, seed=7), cfg, names=ctx.manifest.names)
        b = fit_streaming(BlockSource(ctx, seed=7), cfg, names=ctx.manifest.names)
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.se, b.se)
        assert a.avg_nll == b.avg_nll and a.iterations == b.iterations

    def test_worker_count_does_not_change_bits(self, fitted_case):
        _, ctx, _, _ = fitted_case
        cfg = OptimizerConfig(seed=7)
        a = fit_streaming(BlockSource(ctx, seed=7), cfg, workers=1)
        b = fit_streaming(BlockSource(ctx, seed=7), cfg, workers=4)
        assert np.array_equal(a.beta, b.beta)

    def test_constant_outcome_warns_separation(self):
        from conftest import build_graph, build_vertices

        vt = build_vertices(lat=[0.0] * 8, lon=[k * 0.1 for k in range(8)])
        g = build_graph(vt, [])  # no edges at all: w identically 0
        ctx = FeatureContext(vt, FeatureSpec(distance_bins=False, geo_homophily=False,
                                             similarity=False, directional=False,
                                             popularity="none", activity="none"), graph=g)
        with pytest.warns(SeparationWarning):
            fit_streaming(BlockSource(ctx, seed=1), OptimizerConfig(seed=1, max_epochs=3))

    def test_divergence_names_epoch(self, fitted_case):
        _, ctx, _, _ = fitted_case
        cfg = OptimizerConfig(seed=1, method="sgd", learning_rate=1e306, max_epochs=3)
        with np.errstate(over="ignore"), pytest.raises(OptimizationError, match="epoch"):
            fit_streaming(BlockSource(ctx, seed=1), cfg)

    def test_mini_batch_methods_approach_optimum(self, fitted_case):
        # First-order routes make progress toward the oracle but keep the
        # documented slow tail on ill-conditioned designs.
        _, ctx, x, w = fitted_case
        oracle = fit_newton(x, w, tol=1e-12)
        start = math.log(2.0)
        for method in ("svrg", "sgd"):
            fr = fit_streaming(
                BlockSource(ctx, seed=3),
                OptimizerConfig(seed=3, method=method, learning_rate=1.0, max_epochs=6,
                                tolerance=1e-12, compute_se=False),
            )
            assert oracle.avg_nll <= fr.avg_nll < start
            assert (fr.avg_nll - oracle.avg_nll) < 0.1 * (start - oracle.avg_nll)


class TestMarginalEffects:
    @staticmethod
    def manifest():
        return FeatureManifest(
            names=("bin_a", "bin_b", "same_x", "score", "intercept"),
            kinds=("indicator", "indicator", "indicator", "continuous", "intercept"),
            groups=("distance_bin", "distance_bin", None, None, None),
            n_d=3,
        )

    def test_continuous_effect_at_zero_index(self):
        m = self.manifest()
        beta = np.array([0.5, -0.2, 0.1, 0.8, 0.0])
        xbar = np.zeros(5)  # xbar . beta = 0
        effects = {e.name: e for e in marginal_effects_at_mean(beta, xbar, m)}
        assert effects["score"].value == pytest.approx(0.25 * 0.8, abs=1e-15)
        assert effects["score"].kind == "continuous"

    def test_zero_coefficient_gives_exactly_zero_discrete_effect(self):
        m = self.manifest()
        beta = np.array([0.5, 0.0, 0.3, 0.2, -1.0])
        xbar = np.array([0.1, 0.05, 0.4, 1.3, 1.0])
        effects = {e.name: e for e in marginal_effects_at_mean(beta, xbar, m)}
        assert effects["bin_b"].value == 0.0

    def test_discrete_effects_match_direct_recomputation(self, rng):
        m = self.manifest()
        beta = rng.normal(size=5)
        xbar = rng.random(5)
        xbar[-1] = 1.0
        effects = {e.name: e for e in marginal_effects_at_mean(beta, xbar, m)}

        def lam(v):
            return 1.0 / (1.0 + math.exp(-float(v @ beta)))

        # bin_a: other bins zeroed, dummy on/off.
        base = xbar.copy()
        base[0] = base[1] = 0.0
        on = base.copy()
        on[0] = 1.0
        assert effects["bin_a"].value == pytest.approx(lam(on) - lam(base), abs=1e-12)
        # same_x: plain dummy switch at the mean.
        on, off = xbar.copy(), xbar.copy()
        on[2], off[2] = 1.0, 0.0
        assert effects["same_x"].value == pytest.approx(lam(on) - lam(off), abs=1e-12)

    def test_continuous_sign_matches_coefficient(self, rng):
        m = self.manifest()
        for _ in range(20):
            beta = rng.normal(size=5)
            xbar = rng.random(5)
            effects = {e.name: e for e in marginal_effects_at_mean(beta, xbar, m)}
            assert math.copysign(1, effects["score"].value) == math.copysign(1, beta[3]) or beta[3] == 0

    def test_intercept_excluded(self):
        m = self.manifest()
        effects = marginal_effects_at_mean(np.zeros(5), np.zeros(5), m)
        assert all(e.name != "intercept" for e in effects)


class TestFitByCountry:
    def test_n_obs_per_restriction(self):
        truth, ctx = balanced_truth(n=60, seed=3)
        counts = np.bincount(truth.graph.vertices.codes("country"))
        fits, failures = fit_by_country(ctx, ["TH"], OptimizerConfig(seed=1, max_epochs=30))
        assert not failures
        n = truth.graph.n
        th = truth.graph.vertices.label_code("country", "TH")
        assert fits["world"].n_obs == n * (n - 1)
        assert fits["TH"].n_obs == counts[th] * (n - 1)

    def test_absent_country_is_config_error(self):
        _, ctx = balanced_truth(n=40, seed=3)
        with pytest.raises(ConfigError):
            fit_by_country(ctx, ["XX"], OptimizerConfig(seed=1))

    def test_per_country_distance_coefficients_recovered(self):
        # Distinct planted distance response per sender country, coarse bins.
        spec = FeatureSpec(popularity="none", activity="none", similarity=False,
                           directional=False, geo_homophily=False,
                           bin_scheme=__import__("dyadnet.geo", fromlist=["DistanceBinScheme"]).DistanceBinScheme((100.0,)))
        cfg = SynthConfig(
            n=260,
            countries=(
                CountrySpec("TH", 0.5, 16.0, 101.0, 150.0),
                CountrySpec("BR", 0.5, -10.0, -52.0, 150.0),
            ),
            beta={"intercept": -1.8, "dist_ge_100km": -1.2},
            beta_by_src_country={"BR": {"dist_ge_100km": 0.6}},
            spec=spec,
            seed=21,
        )
        truth = generate(cfg)
        ctx = FeatureContext(truth.graph.vertices, spec, graph=truth.graph)
        fits, failures = fit_by_country(ctx, ["TH", "BR"], OptimizerConfig(seed=2))
        assert not failures
        k = ctx.manifest.index_of("dist_ge_100km")
        th = fits["TH"]
        br = fits["BR"]
        assert abs(th.beta[k] - (-1.2)) <= 2 * th.se[k]
        assert abs(br.beta[k] - 0.6) <= 2 * br.se[k]
