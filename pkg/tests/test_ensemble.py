import numpy as np
import pytest

from downscale_uq.ensemble import GenerationPlan, generate_ensemble, mva_calibrate
from dataclasses import replace

from downscale_uq.errors import (
    ClimatologyMismatchError,
    ConfigError,
    MechanismError,
    ZeroVarianceError,
)
from downscale_uq.fields import (
    Climatology,
    EnsembleSeries,
    GridSpec,
    destandardize,
    fit_climatology,
    standardize,
)
from downscale_uq.models import Dataset, DnnConfig, TrainConfig, train
from downscale_uq.synth import SynthConfig, gen_forecast_ensemble, make_world

QUICK = TrainConfig(lr=2e-3, max_epochs=1, patience=5, batch_size=32, widths=(4, 8))


@pytest.fixture(scope="module")
def setup():
    cfg = SynthConfig(n_lat=8, n_lon=8, n_samples=80, seed=2)
    w = make_world(cfg)
    ds = Dataset.from_physical(w.x, w.y, w.splits["train"], w.splits["val"])
    test = w.x.subset(w.splits["test"][:3])
    fc = gen_forecast_ensemble(test, 10, [1], cfg)[1]
    x_ens = standardize(fc, ds.x_clim)
    models = {k: train(k, ds, QUICK, seed=0) for k in ("snn", "qnn", "vnn")}
    models["dnn"] = train("dnn", ds, QUICK, seed=0,
                          mechanism=DnnConfig(T=6, sampler="ddim", ddim_steps=3, time_dim=8))
    return ds, x_ens, models


class TestPlan:
    def test_defaults(self):
        assert GenerationPlan("qnn").P == 10
        assert [GenerationPlan(k).P for k in ("snn", "vnn", "dnn")] == [20, 20, 20]
        assert GenerationPlan("DNN", P=5).kind == "dnn"

    def test_invalid(self, setup):
        _, _, models = setup
        with pytest.raises(ConfigError):
            GenerationPlan("snn", P=0)
        with pytest.raises(MechanismError):
            GenerationPlan("snn").check(models["qnn"])
        with pytest.raises(ConfigError):
            GenerationPlan("qnn", P=20).check(models["qnn"])


class TestGenerate:
    @pytest.mark.parametrize("kind,expected", [("qnn", 100), ("snn", 200), ("vnn", 200), ("dnn", 200)])
    def test_member_count(self, setup, kind, expected):
        _, x_ens, models = setup
        out = generate_ensemble(models[kind], x_ens, GenerationPlan(kind, seed=1))
        assert out.n_members == expected and out.n_samples == 3 and not out.standardized

    @pytest.mark.parametrize("kind", ["snn", "vnn", "dnn"])
    def test_block_exchangeability(self, setup, kind):
        _, x_ens, models = setup
        plan = GenerationPlan(kind, P=2, seed=4)
        perm = np.random.default_rng(0).permutation(10)
        base = generate_ensemble(models[kind], x_ens, plan).values
        shuffled = generate_ensemble(models[kind], x_ens.with_values(x_ens.values[:, perm]), plan,
                                     member_keys=perm).values
        expected = base.reshape(3, 10, 2, 8, 8)[:, perm].reshape(base.shape)
        assert shuffled.tobytes() == expected.tobytes()

    def test_snn_zero_sigma(self, setup):
        _, x_ens, models = setup
        b = models["snn"]
        params = dict(b.params)
        params["snn_sigma"] = np.zeros(b.grid.shape)
        b0 = replace(b, params=params)
        one = x_ens.with_values(x_ens.values[:, :1])
        out = generate_ensemble(b0, one, GenerationPlan("snn"))
        assert out.n_members == 20 and np.all(out.values == out.values[:, :1])

    def test_climatology_mismatch(self, setup):
        ds, x_ens, models = setup
        other = Climatology(ds.x_clim.mean + 1.0, ds.x_clim.std)
        with pytest.raises(ClimatologyMismatchError):
            generate_ensemble(models["snn"], x_ens.with_values(x_ens.values, clim_ref=other.ref),
                              GenerationPlan("snn"))

    def test_physical_input_rejected(self, setup):
        ds, x_ens, models = setup
        with pytest.raises(ClimatologyMismatchError):
            generate_ensemble(models["snn"], destandardize(x_ens, ds.x_clim), GenerationPlan("snn"))

    def test_member_keys_shape(self, setup):
        _, x_ens, models = setup
        with pytest.raises(ConfigError):
            generate_ensemble(models["snn"], x_ens, GenerationPlan("snn", P=1), member_keys=[0, 1])


G = GridSpec.regular(60.0, 0.0, 4, 4, 2.7, 2.7)


def clim(mu, sd):
    return Climatology(np.full(G.shape, float(mu)), np.full(G.shape, float(sd)))


class TestMva:
    def test_direct(self):
        e = EnsembleSeries(G, np.full((1, 1, *G.shape), 12.0))
        out = mva_calibrate(e, clim(10, 2), clim(8, 1))
        assert np.all(out.values == 9.0)

    def test_identity(self):
        v = np.random.default_rng(0).normal(size=(5, 3, *G.shape))
        c = clim(0.3, 1.7)
        out = mva_calibrate(EnsembleSeries(G, v), c, c)
        assert np.abs(out.values - v).max() < 1e-12

    def test_rank_preserving(self):
        v = np.random.default_rng(1).normal(size=(5, 7, *G.shape))
        out = mva_calibrate(EnsembleSeries(G, v), clim(0.5, 3.0), clim(-2.0, 0.1)).values
        assert np.array_equal(np.argsort(v, axis=1), np.argsort(out, axis=1))

    def test_zero_std(self):
        # a zero-spread hindcast climatology is rejected before it can reach the rescaling
        with pytest.raises(ZeroVarianceError):
            mva_calibrate(EnsembleSeries(G, np.ones((2, 2, *G.shape))), clim(1, 0), clim(1, 1))

    def test_standardized_rejected(self):
        e = EnsembleSeries(G, np.ones((2, 2, *G.shape)), standardized=True, clim_ref="abc")
        with pytest.raises(ConfigError):
            mva_calibrate(e, clim(1, 1), clim(1, 1))

    def test_recovers_bias_and_spread(self):
        cfg = SynthConfig(n_lat=8, n_lon=8, n_samples=500, seed=8)
        w = make_world(cfg)
        truth = w.y
        raw = gen_forecast_ensemble(truth, 10, [3], cfg, bias=1.0, spread=0.5)[3]
        flat = raw.values.reshape(-1, *raw.grid.shape)
        hc = Climatology(flat.mean(axis=0), flat.std(axis=0, ddof=1))
        ref = fit_climatology(truth)
        cal = mva_calibrate(raw, hc, ref).values
        bias = cal.mean(axis=(0, 1)) - truth.values.mean(axis=0)
        ratio = cal.reshape(-1, *raw.grid.shape).std(axis=0, ddof=1) / truth.values.std(axis=0, ddof=1)
        assert np.abs(bias).max() < 0.05
        assert np.all((ratio >= 0.95) & (ratio <= 1.05))
