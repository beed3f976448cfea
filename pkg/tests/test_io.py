# tests/test_io.py
import json

import numpy as np
import pandas as pd
import pytest

from geoapportion.config import EstimatorConfig, RunConfig
from geoapportion.errors import NegativeValueError, NonFiniteError, ParseError
from geoapportion.estimator import apportion
from geoapportion.io import (
    load_concentrations,
    load_ground_truth,
    read_attribution,
    read_matrix,
    write_estimate,
    write_manifest,
    write_simulation,
)
from geoapportion.synthgen import RngSpec, make_ground_truth


def _csv(tmp_path, text, name="y.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------
#  LOADING
# ---------------------------------------------------------
def test_load_small_file(tmp_path):
    Y = load_concentrations(_csv(tmp_path, "a,b\n1,2\n3,4"))
    np.testing.assert_array_equal(Y.values, [[1.0, 2.0], [3.0, 4.0]])
    assert Y.pollutant_names == ["a", "b"]


def test_negative_value_reports_its_coordinates(tmp_path):
    with pytest.raises(NegativeValueError) as info:
        load_concentrations(_csv(tmp_path, "a,b\n1,2\n3,-1\n"))
    assert (info.value.line, info.value.column, info.value.value) == (3, "b", -1.0)
    assert info.value.category == "negative_value"


def test_unparseable_value(tmp_path):
    with pytest.raises(ParseError) as info:
        load_concentrations(_csv(tmp_path, "so2,nox\n1,2\n4,abc\n"))
    assert (info.value.line, info.value.column) == (3, "nox")


def test_missing_value(tmp_path):
    with pytest.raises(ParseError) as info:
        load_concentrations(_csv(tmp_path, "a,b\n1,\n"))
    assert info.value.reason == "missing value"


def test_nan_is_rejected_as_non_finite(tmp_path):
    with pytest.raises(NonFiniteError) as info:
        load_concentrations(_csv(tmp_path, "a,b\n1,2\nnan,4\n"))
    assert (info.value.line, info.value.column) == (3, "a")


def test_empty_file(tmp_path):
    with pytest.raises(ParseError):
        load_concentrations(_csv(tmp_path, ""))


def test_header_only(tmp_path):
    with pytest.raises(ParseError):
        load_concentrations(_csv(tmp_path, "a,b\n"))


def test_duplicate_column_names_are_rejected(tmp_path):
    with pytest.raises(ParseError) as info:
        load_concentrations(_csv(tmp_path, "so2,nox,so2\n1,2,3\n"))
    assert (info.value.line, info.value.column, info.value.reason) == (1, "so2", "duplicate column")


def test_header_names_are_kept_as_written(tmp_path):
    Y = load_concentrations(_csv(tmp_path, "a, a.1 ,b\n1,2,3\n"))
    assert Y.pollutant_names == ["a", "a.1", "b"]


# ---------------------------------------------------------
#  ROUND TRIPS
# ---------------------------------------------------------
@pytest.fixture
def simulated(tmp_path):
    Y, truth = make_ground_truth(300, 8, 3, "ar1", RngSpec.for_replicate(7, 0))
    write_simulation(Y, truth, tmp_path / "sim")
    return Y, truth, tmp_path / "sim"


def test_simulation_round_trip(simulated):
    Y, truth, directory = simulated
    loaded = load_concentrations(directory / "Y.csv")
    np.testing.assert_allclose(loaded.values, Y.values, rtol=1e-12)
    assert loaded.pollutant_names == Y.pollutant_names

    restored = load_ground_truth(directory)
    np.testing.assert_allclose(restored.W, truth.W, rtol=1e-12)
    np.testing.assert_allclose(restored.H, truth.H, rtol=1e-12)
    np.testing.assert_allclose(restored.mu, truth.mu, rtol=1e-12)
    np.testing.assert_allclose(restored.phi_true.values, truth.phi_true.values, rtol=1e-12)


def test_csv_uses_lf_and_full_precision(simulated):
    _, truth, directory = simulated
    raw = (directory / "mu.csv").read_bytes()
    assert b"\r\n" not in raw
    assert float(raw.decode("utf-8").splitlines()[1].split(",")[1]) == truth.mu[0]


def test_estimate_bundle(simulated, tmp_path):
    Y, truth, _ = simulated
    cfg = EstimatorConfig(K=3)
    est = apportion(Y, cfg)
    out = tmp_path / "est"
    written = write_estimate(Y, est, cfg, out, truth=truth)
    assert set(written) == {"phi_hat", "h_star_hat", "m_tilde", "diagnostics", "phi_heatmap", "hull_scatter"}

    phi = read_attribution(out / "phi_hat.csv")
    np.testing.assert_allclose(phi.values, est.phi_hat.values, rtol=1e-12)
    np.testing.assert_allclose(read_matrix(out / "h_star_hat.csv").to_numpy().sum(axis=1), 1.0, atol=1e-10)

    diagnostics = json.loads((out / "diagnostics.json").read_text(encoding="utf-8"))
    assert diagnostics["r_B"] == 2
    assert len(diagnostics["selected_rows"]) == 3

    heatmap = pd.read_csv(out / "phi_heatmap.csv")
    assert list(heatmap.columns) == ["source", "pollutant", "phi_hat", "phi_true"]
    assert len(heatmap) == 3 * 8

    scatter = pd.read_csv(out / "hull_scatter.csv")
    observations = scatter[scatter["kind"] == "observation"]
    assert len(observations) == Y.n
    assert observations["is_selected"].sum() == 3
    assert (observations.loc[observations["is_selected"], "is_hull_vertex"]).all()
    assert (scatter["kind"] == "true_vertex").sum() == 3


def test_manifest_records_config_and_timestamp(tmp_path):
    config = RunConfig(command="estimate", output_dir=str(tmp_path), estimator=EstimatorConfig(K=2), worker_count=3)
    path = write_manifest(config, tmp_path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["config"]["estimator"]["K"] == 2
    assert payload["config"]["worker_count"] == 3
    assert "created_at" in payload
