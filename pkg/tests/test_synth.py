import json
from dataclasses import replace

import numpy as np
import pytest

from downscale_uq.errors import ConfigError
from downscale_uq.spatial import domain_ssr, zonal_spectrum
from downscale_uq.synth import (
    SynthConfig,
    gen_forecast_ensemble,
    gen_predictor,
    gen_target,
    lead_spread,
    make_world,
    noise_covariance,
    noise_std,
    operator_matrix,
    predictor_covariance,
    sample_conditional,
    split_indices,
    standardize_predictor,
    write_oracle_json,
)

from .oracles import ols_slope

SMALL = SynthConfig(n_samples=40)


@pytest.fixture(scope="module")
def big():
    cfg = SynthConfig(n_samples=4000, seed=3)
    x = gen_predictor(cfg)
    y, oracle = gen_target(x, cfg)
    return cfg, x, y, oracle


class TestConfig:
    def test_defaults(self):
        c = SynthConfig()
        g = c.grid
        assert g.shape == (16, 20) and g.dlat == pytest.approx(2.7) and c.members == 10
        assert g.lats.min() == pytest.approx(34.0) and g.lats.max() == pytest.approx(74.5)

    def test_roundtrip(self):
        c = SynthConfig(gamma=2.5, seed=9)
        assert SynthConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"noise_std_min": -1.0}, {"meridional_rho": 1.0},
                                    {"n_samples": 1}, {"n_lon": 3}])
    def test_invalid(self, kw):
        with pytest.raises((ConfigError, ValueError)):
            SynthConfig(**kw)


class TestPredictor:
    def test_deterministic(self):
        a, b = gen_predictor(SMALL), gen_predictor(SMALL)
        assert a.values.tobytes() == b.values.tobytes()
        assert gen_predictor(replace(SMALL, seed=1)).values.tobytes() != a.values.tobytes()

    def test_samples_independent_of_count(self):
        a = gen_predictor(SMALL)
        b = gen_predictor(replace(SMALL, n_samples=10))
        assert np.array_equal(a.values[:10], b.values)

    def test_spectral_slope(self, big):
        cfg, x, _, _ = big
        xs = standardize_predictor(x.subset(np.arange(500)), cfg)
        s = zonal_spectrum(xs, cfg.grid).energy
        k = np.arange(1, 7)
        slope = ols_slope(np.log(k), np.log(s[1:7]))
        assert abs(slope + cfg.gamma) < 0.3

    def test_spatial_mean(self, big):
        cfg, x, _, _ = big
        xs = standardize_predictor(x.subset(np.arange(500)), cfg)
        assert abs(xs.mean()) < 3 / np.sqrt(xs.size)

    def test_unit_variance_covariance(self):
        c = predictor_covariance(SMALL)
        np.testing.assert_allclose(np.diag(c), 1.0)
        assert np.linalg.eigvalsh(c).min() > -1e-10


class TestTarget:
    def test_noiseless(self):
        cfg = replace(SMALL, noise_std_min=0.0, noise_std_max=0.0)
        x = gen_predictor(cfg)
        y, oracle = gen_target(x, cfg)
        np.testing.assert_allclose(y.values, oracle.cond_mean.values, rtol=0, atol=1e-12)

    def test_operator_preserves_constants(self):
        a = operator_matrix(SMALL)
        np.testing.assert_allclose(a.sum(axis=1), 1.0)

    def test_regression_slope(self, big):
        _, _, y, oracle = big
        n = 500
        slopes = [ols_slope(oracle.cond_mean.values[:n, i, j], y.values[:n, i, j])
                  for i in range(0, 16, 3) for j in range(0, 20, 3)]
        # slope of one grid point has sampling error; pooled over points it is tight
        assert abs(np.mean(slopes) - 1) < 0.05
        big_slope = ols_slope(oracle.cond_mean.values, y.values)
        assert abs(big_slope - 1) < 0.05

    def test_noise_variance(self, big):
        _, _, y, oracle = big
        r = y.values - oracle.cond_mean.values
        ratio = r.var(axis=0, ddof=1) / oracle.cond_std ** 2
        assert np.all(np.abs(ratio - 1) < 0.10)

    def test_noise_heteroscedastic(self):
        s = noise_std(SMALL)
        assert s[0, 0] == pytest.approx(SMALL.noise_std_max) and s[-1, 0] == pytest.approx(SMALL.noise_std_min)
        assert np.linalg.eigvalsh(noise_covariance(SMALL)).min() > -1e-10

    def test_oracle_psd_and_json(self, tmp_path):
        x = gen_predictor(SMALL)
        _, oracle = gen_target(x, SMALL)
        write_oracle_json(oracle, tmp_path / "o.json", {"extra": 1})
        d = json.loads((tmp_path / "o.json").read_text())
        assert d["noise_cov_psd_min_eigenvalue"] > -1e-9 and d["extra"] == 1
        assert len(d["spectrum"]["k"]) == 11

    def test_expected_spectrum_matches_samples(self, big):
        cfg, _, y, oracle = big
        s = zonal_spectrum(y).energy
        rel = np.abs(s / oracle.spectrum_target - 1)
        assert rel.max() < 0.1

    def test_oracle_is_mse_floor(self, big):
        _, _, y, oracle = big
        mse = ((oracle.cond_mean.values - y.values) ** 2).mean()
        shrunk = ((0.9 * oracle.cond_mean.values + 0.1 * y.values.mean(0) - y.values) ** 2).mean()
        assert mse <= shrunk + 1e-9
        assert mse == pytest.approx(oracle.cond_mse.mean(), rel=0.05)


class TestConditionalAndForecast:
    def test_conditional_is_consistent(self, big):
        cfg, x, y, _ = big
        sub = x.subset(np.arange(300))
        ens = sample_conditional(sub, cfg, 10, 5)
        assert 0.9 <= domain_ssr(ens, y.subset(np.arange(300))) <= 1.1

    def test_lead_growth(self):
        x = gen_predictor(SMALL)
        fc = gen_forecast_ensemble(x, 10, range(1, 7), SMALL)
        stds = [(fc[w].values - x.values[:, None]).std() for w in range(1, 7)]
        assert np.all(np.diff(stds) > 0)
        assert [lead_spread(SMALL, w) for w in (1, 2)] == [pytest.approx(0.12), pytest.approx(0.24)]
        assert fc[1].n_members == 10

    def test_bias_and_spread(self):
        x = gen_predictor(SMALL)
        plain = gen_forecast_ensemble(x, 4, [2], SMALL)[2].values
        biased = gen_forecast_ensemble(x, 4, [2], SMALL, bias=1.0)[2].values
        np.testing.assert_allclose(biased - plain, 1.0, atol=1e-9)
        clim = x.values.mean(axis=0)
        narrow = gen_forecast_ensemble(x, 4, [2], SMALL, spread=0.5)[2].values
        np.testing.assert_allclose(narrow - clim, 0.5 * (plain - clim), atol=1e-9)

    def test_forecast_errors(self):
        x = gen_predictor(SMALL)
        with pytest.raises(ConfigError):
            gen_forecast_ensemble(x, 1, [1], SMALL)
        with pytest.raises(ConfigError):
            gen_forecast_ensemble(x, 3, [0], SMALL)


def test_splits_and_world():
    s = split_indices(1000)
    assert [len(s[k]) for k in ("train", "val", "test")] == [640, 160, 200]
    assert np.array_equal(np.concatenate(list(s.values())), np.arange(1000))
    w = make_world(SMALL)
    assert w.x.n_samples == 40 and sum(len(v) for v in w.splits.values()) == 40
    with pytest.raises(ConfigError):
        split_indices(10, (0.5, 0.5))
