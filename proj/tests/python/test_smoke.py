import numpy as np
import pytest

import nfm

TINY = {"hidden": 6, "blocks": 1, "h0": 8, "inr_hidden": 8, "proj_width": 8, "ff_scale": 4.0}


def test_rfft_matches_numpy():
    rng = np.random.default_rng(0)
    for n in (1, 7, 64, 100):
        x = rng.standard_normal(n)
        np.testing.assert_allclose(nfm.rfft(x), np.fft.rfft(x), atol=1e-10)
        np.testing.assert_allclose(nfm.irfft(nfm.rfft(x), n), x, atol=1e-12)
        np.testing.assert_allclose(nfm.naive_dft(x)[: n // 2 + 1], np.fft.rfft(x), atol=1e-10)


def test_extension_repeats_and_resamples():
    x = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(nfm.extend(x, m_tau=(3, 1)), np.tile(x, 3), atol=1e-12)
    np.testing.assert_allclose(nfm.extend(x, m_f=(2, 1)), nfm.sinc_resample(x, 8), atol=1e-12)
    np.testing.assert_allclose(nfm.decimate(np.arange(6.0), 2), [0.0, 2.0, 4.0])
    with pytest.raises(nfm.NfmError):
        nfm.decimate(np.arange(5.0), 2)


def test_synth_generate():
    x, labels, freqs = nfm.synth_generate(classes=3, fixed=1, random=0, length=200, band_lo=20, band_hi=60,
                                          noise=0.0, per_class=2, seed=1)
    assert x.shape == (6, 200)
    for row, label in zip(x, labels):
        assert np.argmax(np.abs(np.fft.rfft(row))) == freqs[label][0]


def test_anomaly_helpers():
    assert nfm.threshold_by_ratio(np.array([4.0, 1.0, 3.0, 2.0]), 50.0) == pytest.approx(2.5)
    assert nfm.point_adjust([0, 0, 1, 0], [0, 1, 1, 1]) == [0, 1, 1, 1]


def test_config_and_model():
    cfg = {"task": {"kind": "forecast", "horizon": 16}, "model": TINY, "data": {"source": "sines", "window": 32}}
    full = nfm.validate_config(cfg)
    assert full["optim"]["sampler"] == "shuffle"
    assert nfm.config_hash(cfg) == nfm.config_hash(full)
    model = nfm.Model(cfg, channels=2, seed=3)
    assert model.param_count == nfm.param_count(cfg, channels=2)
    y = model.forward(np.zeros((2, 32, 2)) + 0.1, m_tau=(3, 2))
    assert y.shape == (2, 48, 2)
    assert np.all(np.isfinite(y))
    with pytest.raises(nfm.NfmError):
        nfm.validate_config({"task": {"kind": "forecast"}, "bogus": 1})


def test_gradcheck_and_short_run():
    assert max(nfm.gradcheck().values()) < 1e-4
    cfg = {"task": {"kind": "forecast", "horizon": 8, "norm": "revin"}, "model": TINY,
           "data": {"source": "sines", "sines": {"length": 300}, "window": 16, "train_stride": 8},
           "optim": {"epochs": 1, "batch": 8}}
    m = nfm.run(cfg)
    assert m["epochs"] == 1
    assert np.isfinite(m["mse"]) and m["mse"] >= 0.0


def test_configs_match_schema():
    jsonschema = pytest.importorskip("jsonschema")
    import json
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[2]
    schema = json.loads((root / "schemas" / "run_config.schema.json").read_text())
    for path in sorted((root / "configs").glob("*.json")):
        cfg = json.loads(path.read_text())
        jsonschema.validate(cfg, schema)
        jsonschema.validate(nfm.validate_config(cfg), schema)
