"""Tests for copula-driven correlated count streams."""

import numpy as np
import pytest
import scipy.stats
from scipy.special import ndtri

from seqfdr.datagen import (
    Bernoulli,
    BlockClusters,
    CopulaConfig,
    Poisson,
    ReportPair,
    Toeplitz,
    _PoissonCdfTable,
    cholesky,
    copula_uniforms,
    correlation_matrix,
    dump_fixture,
    invert_marginal,
    load_fixture,
    stream_sources,
)
from seqfdr.errors import FactorizationError


class TestCorrelationMatrix:
    def test_toeplitz_values(self):
        mat = correlation_matrix(CopulaConfig(3, Toeplitz(-0.6)))
        np.testing.assert_allclose(
            mat,
            [[1.0, -0.6, 0.36], [-0.6, 1.0, -0.6], [0.36, -0.6, 1.0]],
            atol=1e-15,
        )

    def test_toeplitz_zero_is_identity(self):
        mat = correlation_matrix(CopulaConfig(4, Toeplitz(0.0)))
        np.testing.assert_array_equal(mat, np.eye(4))

    def test_block_clusters(self):
        structure = BlockClusters(cluster_of=(0, 0, 1), rho_of_cluster=(0.5, -0.2))
        mat = correlation_matrix(CopulaConfig(3, structure))
        np.testing.assert_allclose(
            mat, [[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]], atol=1e-15
        )

    def test_scattered_cluster_is_positive_definite(self):
        structure = BlockClusters(cluster_of=(0, 1, 0, 1, 0), rho_of_cluster=(-0.7, 0.9))
        mat = correlation_matrix(CopulaConfig(5, structure))
        np.testing.assert_allclose(mat, mat.T)
        fac = cholesky(mat)
        np.testing.assert_allclose(fac @ fac.T, mat, atol=1e-10)

    def test_structure_validation(self):
        with pytest.raises(ValueError):
            Toeplitz(1.0)
        with pytest.raises(ValueError):
            BlockClusters(cluster_of=(0, 2), rho_of_cluster=(0.5, 0.5))
        with pytest.raises(ValueError):
            BlockClusters(cluster_of=(0,), rho_of_cluster=(1.5,))
        with pytest.raises(ValueError):
            CopulaConfig(3, BlockClusters(cluster_of=(0, 0), rho_of_cluster=(0.5,)))


class TestCholesky:
    def test_factorization_property(self):
        for rho in (-0.9, -0.6, 0.0, 0.6):
            mat = correlation_matrix(CopulaConfig(10, Toeplitz(rho)))
            fac = cholesky(mat)
            np.testing.assert_allclose(fac @ fac.T, mat, atol=1e-10)
            assert np.allclose(fac, np.tril(fac))

    def test_failure_names_minor(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(FactorizationError, match="order 2"):
            cholesky(bad)
        with pytest.raises(FactorizationError, match="order 1"):
            cholesky(np.array([[-1.0, 0.0], [0.0, 1.0]]))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            cholesky(np.ones((2, 3)))
        with pytest.raises(ValueError):
            cholesky(np.array([[1.0, 0.5], [0.2, 1.0]]))


class TestInvertMarginal:
    def test_bernoulli_threshold(self):
        assert invert_marginal(Bernoulli(0.05), 0.05) == 1
        assert invert_marginal(Bernoulli(0.05), 0.050001) == 0
        assert invert_marginal(Bernoulli(0.05), 0.0) == 1

    def test_poisson_first_steps(self):
        # F(0) = exp(-1.5) ~ 0.22313
        assert invert_marginal(Poisson(1.5), 0.22) == 0
        assert invert_marginal(Poisson(1.5), 0.23) == 1

    def test_report_pair(self):
        amn, oth = invert_marginal(ReportPair(0.6, 9.6), (0.5, 0.5))
        assert amn >= 0 and oth >= 0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            invert_marginal(Bernoulli(0.5), 1.0)
        with pytest.raises(ValueError):
            invert_marginal(Poisson(1.5), -0.1)
        with pytest.raises(ValueError):
            invert_marginal(ReportPair(1.0, 2.0), 0.5)

    @pytest.mark.parametrize("lam", [0.3, 1.5, 2.0, 37.5, 250.0])
    def test_matches_scipy_quantiles(self, lam):
        rng = np.random.default_rng(11)
        us = rng.random(400)
        table = _PoissonCdfTable(lam)
        mine = table.invert(us)
        oracle = scipy.stats.poisson.ppf(us, lam).astype(int)
        np.testing.assert_array_equal(mine, oracle)

    def test_cdf_table_matches_scipy(self):
        table = _PoissonCdfTable(2.0)
        ks = np.arange(table.cdf.size)
        np.testing.assert_allclose(table.cdf, scipy.stats.poisson.cdf(ks, 2.0), atol=1e-12)

    def test_mean_of_inversions(self):
        rng = np.random.default_rng(5)
        us = rng.random(100_000)
        vals = _PoissonCdfTable(2.0).invert(us)
        assert vals.mean() == pytest.approx(2.0, abs=0.02)


class TestCopulaUniforms:
    def test_shapes(self):
        cfg = CopulaConfig(4, Toeplitz(-0.6))
        rng = np.random.default_rng(0)
        assert copula_uniforms(cfg, rng).shape == (4,)
        assert copula_uniforms(cfg, rng, size=7).shape == (7, 4)

    def test_deterministic_under_seed(self):
        cfg = CopulaConfig(4, Toeplitz(0.6))
        a = copula_uniforms(cfg, np.random.default_rng(42), size=5)
        b = copula_uniforms(cfg, np.random.default_rng(42), size=5)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("rho", [-0.6, 0.0, 0.6])
    def test_marginal_uniformity(self, rho):
        cfg = CopulaConfig(3, Toeplitz(rho))
        u = copula_uniforms(cfg, np.random.default_rng(9), size=40_000)
        for j in range(3):
            stat = scipy.stats.kstest(u[:, j], "uniform")
            assert stat.pvalue > 0.01, (rho, j, stat.pvalue)

    @pytest.mark.parametrize("rho", [-0.6, 0.0, 0.6])
    def test_adjacent_latent_correlation(self, rho):
        cfg = CopulaConfig(3, Toeplitz(rho))
        u = copula_uniforms(cfg, np.random.default_rng(13), size=60_000)
        y = ndtri(u)
        for j in range(2):
            got = np.corrcoef(y[:, j], y[:, j + 1])[0, 1]
            assert got == pytest.approx(rho, abs=0.02)


class TestStreamSources:
    def _sources(self, seed=3, block=64, horizon=500, rho=-0.6, specs=None):
        cfg = CopulaConfig(3, Toeplitz(rho), seed=seed)
        if specs is None:
            specs = [Bernoulli(0.05), Bernoulli(0.15), Bernoulli(0.05)]
        return stream_sources(cfg, specs, horizon=horizon, block=block)

    def test_block_size_independence(self):
        takes = [(1, 10), (11, 37), (38, 200)]
        outs = []
        for block in (5, 64, 512):
            srcs = self._sources(block=block)
            outs.append([np.concatenate([s.take(a, b) for a, b in takes]) for s in srcs])
        for j in range(3):
            np.testing.assert_array_equal(outs[0][j], outs[1][j])
            np.testing.assert_array_equal(outs[1][j], outs[2][j])

    def test_deterministic_under_seed(self):
        a = [s.take(1, 50) for s in self._sources(seed=77)]
        b = [s.take(1, 50) for s in self._sources(seed=77)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_horizon_exhaustion(self):
        srcs = self._sources(horizon=20)
        first = srcs[0].take(1, 15)
        assert len(first) == 15
        rest = srcs[0].take(16, 40)
        assert len(rest) == 5
        assert len(srcs[0].take(21, 30)) == 0

    def test_contiguity_enforced(self):
        srcs = self._sources()
        srcs[0].take(1, 4)
        with pytest.raises(ValueError):
            srcs[0].take(6, 8)

    def test_truth_selects_marginal(self):
        cfg = CopulaConfig(2, Toeplitz(0.0), seed=21)
        pairs = [(Bernoulli(0.05), Bernoulli(0.6))] * 2
        srcs = stream_sources(cfg, pairs, truth=[True, False], horizon=4000)
        null_mean = srcs[0].take(1, 4000).mean()
        alt_mean = srcs[1].take(1, 4000).mean()
        assert null_mean == pytest.approx(0.05, abs=0.02)
        assert alt_mean == pytest.approx(0.6, abs=0.03)

    def test_report_pair_rows(self):
        cfg = CopulaConfig(2, Toeplitz(0.3), seed=8)
        specs = [ReportPair(0.6, 9.6), ReportPair(2.0, 5.0)]
        srcs = stream_sources(cfg, specs, horizon=3000)
        obs = srcs[0].take(1, 3000)
        assert obs.shape == (3000, 2)
        assert np.all(obs[:, 0] <= obs[:, 1])
        assert obs[:, 0].mean() == pytest.approx(0.6, abs=0.06)
        assert obs[:, 1].mean() == pytest.approx(10.2, abs=0.25)

    def test_mixing_kinds_rejected(self):
        cfg = CopulaConfig(2, Toeplitz(0.0), seed=1)
        with pytest.raises(ValueError):
            stream_sources(cfg, [Bernoulli(0.1), ReportPair(1.0, 2.0)], horizon=10)

    def test_negative_dependence_in_counts(self):
        srcs = self._sources(seed=19, horizon=60_000, rho=-0.6)
        x0 = srcs[0].take(1, 60_000).astype(float)
        x1 = srcs[1].take(1, 60_000).astype(float)
        r = np.corrcoef(x0, x1)[0, 1]
        se = np.sqrt((1 - r * r) / len(x0))
        assert r < -3 * se

    def test_poisson_marginal_gof(self):
        cfg = CopulaConfig(2, Toeplitz(-0.6), seed=4)
        srcs = stream_sources(cfg, [Poisson(1.5), Poisson(2.0)], horizon=40_000)
        for src, lam in zip(srcs, (1.5, 2.0)):
            x = src.take(1, 40_000)
            kmax = 9
            obs = np.bincount(np.minimum(x, kmax), minlength=kmax + 1)
            probs = scipy.stats.poisson.pmf(np.arange(kmax), lam)
            probs = np.append(probs, 1.0 - probs.sum())
            res = scipy.stats.chisquare(obs, probs * len(x))
            assert res.pvalue > 0.01, (lam, res.pvalue)


class TestFixtureRoundTrip:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        trials = [
            [rng.standard_normal(4), rng.standard_normal(6)],
            [rng.standard_normal(3), rng.standard_normal(5)],
        ]
        path = tmp_path / "fixture.txt"
        dump_fixture(path, trials)
        loaded = load_fixture(path)
        assert len(loaded) == 2
        for orig, back in zip(trials, loaded):
            for a, b in zip(orig, back):
                np.testing.assert_array_equal(a, b)

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.txt"
        dump_fixture(path, [])
        assert load_fixture(path) == []
