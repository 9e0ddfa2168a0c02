import numpy as np
import pytest

from stoxlstm import numerics as nm
from stoxlstm.dataio import (
    ETTH1_COLUMNS,
    DatasetSpec,
    export_forecast,
    export_latents,
    load_csv,
    read_matrix,
    read_table,
    write_csv,
    write_ett_like_csv,
)
from stoxlstm.errors import DataError
from stoxlstm.generative import generate
from stoxlstm.inference import infer
from stoxlstm.preprocess import pad_patch_generative, pad_patch_inference


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_toy_csv_shape(tmp_path):
    path = _write(tmp_path, "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n2020-01-03,5,6.5\n")
    ds = load_csv(DatasetSpec(path))
    assert ds.values.shape == (2, 3)
    np.testing.assert_array_equal(ds.values, [[1, 3, 5], [2, 4, 6.5]])
    assert ds.columns == ["a", "b"] and ds.dates[0] == "2020-01-01"


@pytest.mark.parametrize("cell", ["nan", "NaN", "inf", "abc"])
def test_bad_cell_reports_location(tmp_path, cell):
    path = _write(tmp_path, f"date,a,b\nx,1,2\ny,{cell},4\n")
    with pytest.raises(DataError, match=r"row 3, column 'a'"):
        load_csv(DatasetSpec(path))


def test_missing_column_and_ragged_rows(tmp_path):
    path = _write(tmp_path, "date,a\nx,1\n")
    with pytest.raises(DataError, match="zz"):
        load_csv(DatasetSpec(path, value_columns=["zz"]))
    ragged = _write(tmp_path, "date,a\nx,1,5\n", "r.csv")
    with pytest.raises(DataError, match="row 2"):
        load_csv(DatasetSpec(ragged))
    with pytest.raises(DataError):
        load_csv(DatasetSpec(str(tmp_path / "absent.csv")))


def test_lossless_read_back(tmp_path, rng):
    vals = rng.standard_normal((5, 3)) * 10.0 ** rng.integers(-5, 5, (5, 3))
    path = str(tmp_path / "v.csv")
    write_csv(path, ["date", "a", "b", "c"], [[f"d{i}", *map(float, r)] for i, r in enumerate(vals)])
    ds = load_csv(DatasetSpec(path))
    assert ds.values.T.tobytes() == vals.tobytes()


def test_ett_splits_and_train_only_statistics(tmp_path):
    path = str(tmp_path / "ett.csv")
    write_ett_like_csv(path, rows=3000)
    ds = load_csv(DatasetSpec(path, splits=(2000, 500, 500)))
    assert ds.columns == ETTH1_COLUMNS and ds.values.shape == (7, 3000)
    assert ds.boundaries == (2000, 2500, 3000)
    np.testing.assert_allclose(ds.mean[:, 0], ds.values[:, :2000].mean(axis=1))
    # stats over train + val differ, so nothing leaks from later splits
    assert not np.allclose(ds.mean[:, 0], ds.values[:, :2500].mean(axis=1))
    assert ds.split("test", lookback=96).shape == (7, 596)
    np.testing.assert_allclose(ds.standardized[:, :2000].mean(axis=1), 0, atol=1e-12)


def test_full_size_ett_convention_accepted(tmp_path):
    path = str(tmp_path / "big.csv")
    write_ett_like_csv(path, rows=8640 + 2880 + 2880)
    ds = load_csv(DatasetSpec(path, splits=(8640, 2880, 2880)))
    assert ds.boundaries[-1] == 14400


def test_splits_beyond_rows_rejected(tmp_path):
    path = _write(tmp_path, "a\n1\n2\n")
    with pytest.raises(DataError):
        load_csv(DatasetSpec(path, date_column=None, splits=(2, 1, 0)))


def test_forecast_export_round_trip(tmp_path, rng):
    point = rng.standard_normal((2, 6))
    samples = rng.standard_normal((50, 2, 6))
    truth = rng.standard_normal((2, 6))
    written = export_forecast(point, samples, truth, str(tmp_path), ["a", "b"])
    assert len(written) == 4
    table = read_table(str(tmp_path / "forecast_b.csv"))
    np.testing.assert_allclose(table["point"], point[1], atol=1e-12)
    assert (table["q10"] <= table["q50"]).all() and (table["q50"] <= table["q90"]).all()
    assert (tmp_path / "forecast_a.svg").read_text().startswith("<svg")


def test_forecast_export_empty_horizon(tmp_path):
    export_forecast(np.zeros((1, 0)), None, np.zeros((1, 0)), str(tmp_path), ["x"])
    assert (tmp_path / "forecast_x.csv").read_text() == "step,truth,point,q10,q50,q90\n"


def test_latent_export_shapes(tiny, rng, tmp_path):
    cfg, params = tiny
    x = rng.standard_normal((1, cfg.lookback + cfg.horizon))
    with nm.no_grad():
        gen = generate(pad_patch_generative(x[:, :cfg.lookback], cfg.horizon, cfg.P, cfg.S), params, cfg)
        post = infer(pad_patch_inference(x, cfg.P, cfg.S, cfg.lookback), params, cfg, rng=0)
    paths = export_latents(gen, post, str(tmp_path))
    steps = cfg.N + 1
    assert steps == 4
    for name in ("gen_xp", "gen_h", "inf_h", "inf_g", "inf_xp"):
        assert read_matrix(paths[name]).shape == (steps, cfg.d_model)
    for name in ("gen_z_mean", "gen_z_logvar", "inf_z_mean", "inf_z_logvar"):
        assert read_matrix(paths[name]).shape == (steps, cfg.d_latent)
    first = {k: open(p).read() for k, p in paths.items()}
    export_latents(gen, post, str(tmp_path))
    assert first == {k: open(p).read() for k, p in paths.items()}
