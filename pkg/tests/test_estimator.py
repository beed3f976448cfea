# tests/test_estimator.py
import numpy as np
import pytest

from conftest import planted
from geoapportion.config import EstimatorConfig
from geoapportion.errors import (
    DegenerateCloudError,
    DroppedRowsWarning,
    TooFewCandidatesError,
    ZeroDenominatorError,
    ZeroRowError,
)
from geoapportion.estimator import (
    apportion,
    compute_phi,
    estimate_h_star,
    estimate_mu_tilde,
    extract_candidates,
    row_normalize,
)
from geoapportion.evaluation import align_rows
from geoapportion.models import AttributionMatrix, ConcentrationMatrix
from geoapportion.synthgen import RngSpec, make_ground_truth


def _ring_data(profiles, n_ring=40, n_inner=60, seed=0):
    """Mixtures whose weights trace a circle, so every ring record is a hull vertex."""
    u = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    v = np.array([1.0, 1.0, -2.0]) / np.sqrt(6)
    theta = 2 * np.pi * np.arange(n_ring) / n_ring
    ring = 1 / 3 + 0.2 * (np.outer(np.cos(theta), u) + np.outer(np.sin(theta), v))
    inner = 1 / 3 + 0.05 * np.random.default_rng(seed).uniform(-1, 1, (n_inner, 1)) * u
    return ConcentrationMatrix(np.vstack([ring, inner]) @ profiles)


# ---------------------------------------------------------
#  ROW NORMALIZATION
# ---------------------------------------------------------
def test_row_normalize_projects_rows_onto_simplex():
    Y = ConcentrationMatrix([[1.0, 3.0], [2.0, 2.0]])
    data = row_normalize(Y)
    np.testing.assert_allclose(data.ystar, [[0.25, 0.75], [0.5, 0.5]])
    np.testing.assert_allclose(data.row_sums, [4.0, 4.0])
    assert data.n_dropped == 0


def test_zero_rows_are_dropped_with_a_warning():
    Y = ConcentrationMatrix([[1.0, 3.0], [0.0, 0.0], [2.0, 2.0]])
    with pytest.warns(DroppedRowsWarning):
        data = row_normalize(Y)
    assert data.kept_rows.tolist() == [0, 2]
    assert data.n_total == 3 and data.n_dropped == 1


def test_zero_rows_can_be_rejected():
    Y = ConcentrationMatrix([[1.0, 3.0], [0.0, 0.0]])
    with pytest.raises(ZeroRowError) as info:
        row_normalize(Y, zero_row_policy="error")
    assert info.value.rows == [1]


# ---------------------------------------------------------
#  CANDIDATES AND PROFILES
# ---------------------------------------------------------
def test_planted_corners_are_the_only_candidates(planted_data):
    Y, truth = planted_data
    data = row_normalize(Y)
    candidates = extract_candidates(data, EstimatorConfig(K=3))
    assert candidates.basis.rank == 2
    assert sorted(candidates.row_indices.tolist()) == list(range(Y.n - 3, Y.n))


def test_pruning_caps_the_candidate_count(triangle_profiles):
    Y = _ring_data(triangle_profiles)
    cfg = EstimatorConfig(K=3, prune=True, cluster_count=6)
    candidates = extract_candidates(row_normalize(Y), cfg)
    assert candidates.n_hull_vertices == 40
    assert 3 <= candidates.m <= 6


def test_too_few_rows_for_the_source_count():
    Y = ConcentrationMatrix(np.random.default_rng(0).uniform(0.1, 1.0, (3, 5)))
    with pytest.raises(TooFewCandidatesError):
        extract_candidates(row_normalize(Y), EstimatorConfig(K=3))


def test_profiles_are_rows_of_the_normalized_data(planted_data):
    Y, truth = planted_data
    data = row_normalize(Y)
    profiles = estimate_h_star(data, EstimatorConfig(K=3))
    np.testing.assert_array_equal(profiles.h_star_hat, data.ystar[profiles.row_indices])
    np.testing.assert_allclose(profiles.h_star_hat.sum(axis=1), 1.0, atol=1e-12)
    assert profiles.search_used == "exhaustive"


# ---------------------------------------------------------
#  SOURCE MEANS
# ---------------------------------------------------------
@pytest.mark.parametrize("seed", range(20))
def test_affine_means_equal_scaled_emission_means(seed):
    rng = np.random.default_rng(seed)
    _, truth = make_ground_truth(400, 8, 3, "ar1", RngSpec.for_replicate(seed, 1))
    d = rng.uniform(0.5, 3.0, size=3)
    Y = ConcentrationMatrix(truth.W @ (d[:, None] * truth.h_star))
    data = row_normalize(Y)
    m_tilde = estimate_mu_tilde(Y, data, truth.h_star, EstimatorConfig(K=3))
    np.testing.assert_allclose(m_tilde, (truth.W * d).mean(axis=0), rtol=0, atol=1e-10)


def test_projected_means_agree_on_noiseless_data():
    _, truth = make_ground_truth(500, 8, 3, "mixture", RngSpec.for_replicate(4, 0))
    Y = ConcentrationMatrix(truth.W @ truth.H)
    data = row_normalize(Y)
    affine = estimate_mu_tilde(Y, data, truth.h_star, EstimatorConfig(K=3))
    projected = estimate_mu_tilde(Y, data, truth.h_star, EstimatorConfig(K=3, mean_method="projected"))
    np.testing.assert_allclose(projected, affine, atol=1e-8)


def test_compute_phi_is_column_stochastic(triangle_profiles):
    phi = compute_phi([1.0, 2.0, 0.5], triangle_profiles)
    np.testing.assert_allclose(phi.values.sum(axis=0), 1.0, atol=1e-12)
    assert phi.source_labels == ["source_1", "source_2", "source_3"]


def test_compute_phi_rejects_unexplained_columns():
    profiles = np.array([[0.5, 0.5, 0.0], [0.2, 0.8, 0.0]])
    with pytest.raises(ZeroDenominatorError) as info:
        compute_phi([1.0, 1.0], profiles)
    assert info.value.column == 2


# ---------------------------------------------------------
#  PIPELINE
# ---------------------------------------------------------
def test_apportion_recovers_sample_fractions(planted_data):
    Y, truth = planted_data
    est = apportion(Y, EstimatorConfig(K=3))
    perm = align_rows(truth.phi_sample.values, est.phi_hat.values).permutation
    np.testing.assert_allclose(est.phi_hat.values[perm], truth.phi_sample.values, atol=1e-8)
    np.testing.assert_allclose(est.h_star_hat[perm], truth.h_star, atol=1e-10)
    assert est.diagnostics.r_B == 2
    assert est.diagnostics.n_hull_vertices == 3
    assert est.diagnostics.warnings == []


def test_apportion_reports_original_row_numbers():
    Y, truth = planted(5, n=200)
    padded = ConcentrationMatrix(np.vstack([np.zeros(Y.J), Y.values]), Y.pollutant_names)
    est = apportion(padded, EstimatorConfig(K=3))
    assert est.diagnostics.n_rows_dropped == 1
    assert sorted(est.diagnostics.selected_rows) == [201, 202, 203]
    assert [w["category"] for w in est.diagnostics.warnings] == ["dropped_rows"]


def test_apportion_greedy_and_exhaustive_agree_on_planted_data(planted_data):
    Y, _ = planted_data
    greedy = apportion(Y, EstimatorConfig(K=3, search="greedy"))
    exhaustive = apportion(Y, EstimatorConfig(K=3, search="exhaustive"))
    assert greedy.diagnostics.selected_rows == exhaustive.diagnostics.selected_rows
    np.testing.assert_allclose(greedy.phi_hat.values, exhaustive.phi_hat.values, atol=1e-12)


def test_exhaustive_falls_back_to_greedy_over_budget():
    Y, _ = make_ground_truth(300, 8, 3, "ar1", RngSpec.for_replicate(2, 0))
    est = apportion(Y, EstimatorConfig(K=3, search="exhaustive", exhaustive_budget=1))
    assert est.diagnostics.search_used == "greedy"
    assert "search_fallback" in [w["category"] for w in est.diagnostics.warnings]


def test_single_source():
    Y = ConcentrationMatrix(np.random.default_rng(0).uniform(0.5, 2.0, (50, 4)))
    est = apportion(Y, EstimatorConfig(K=1))
    np.testing.assert_array_equal(est.phi_hat.values, np.ones((1, 4)))
    assert est.m_tilde[0] == pytest.approx(Y.values.sum(axis=1).mean())
    assert est.diagnostics.search_used == "single"
    assert est.diagnostics.r_B is None
    assert est.diagnostics.to_dict()["r_B"] is None


def test_source_count_must_be_below_pollutant_count():
    Y = ConcentrationMatrix(np.random.default_rng(0).uniform(0.5, 2.0, (50, 4)))
    with pytest.raises(ValueError):
        apportion(Y, EstimatorConfig(K=4))


def test_errors_carry_the_failing_stage():
    Y = ConcentrationMatrix(np.tile([1.0, 2.0, 3.0, 4.0], (10, 1)))
    with pytest.raises(DegenerateCloudError) as info:
        apportion(Y, EstimatorConfig(K=2))
    assert info.value.stage == "extract_candidates"
    assert str(info.value).startswith("[extract_candidates]")
    assert "all rows are identical" in str(info.value)


def test_estimate_can_be_relabelled(planted_data):
    Y, _ = planted_data
    est = apportion(Y, EstimatorConfig(K=3))
    swapped = est.permuted([2, 0, 1])
    np.testing.assert_array_equal(swapped.h_star_hat, est.h_star_hat[[2, 0, 1]])
    assert isinstance(swapped.phi_hat, AttributionMatrix)
    assert swapped.phi_hat.source_labels == ["source_3", "source_1", "source_2"]


def test_duplicated_pollutant_column_still_runs(planted_data):
    Y, _ = planted_data
    doubled = ConcentrationMatrix(np.hstack([Y.values, Y.values[:, :1]]), Y.pollutant_names + ["copy_of_1"])
    est = apportion(doubled, EstimatorConfig(K=3))
    assert est.diagnostics.r_B == 2
    np.testing.assert_allclose(est.phi_hat.values.sum(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(est.phi_hat.values[:, -1], est.phi_hat.values[:, 0], atol=1e-12)


@pytest.mark.parametrize("seed", [3, 8])
def test_column_units_do_not_change_the_attribution_without_planted_rows(seed):
    Y, _ = make_ground_truth(400, 8, 3, "mixture", RngSpec.for_replicate(seed, 0))
    sigma = 10.0 ** np.random.default_rng(seed).uniform(-1, 1, size=Y.J)
    scaled = Y.scaled(sigma)
    cfg = EstimatorConfig(K=3)

    base_data, scaled_data = row_normalize(Y), row_normalize(scaled)
    base_candidates = extract_candidates(base_data, cfg)
    # positive column scaling maps the normalized cloud projectively, so the hull keeps its vertices
    np.testing.assert_array_equal(extract_candidates(scaled_data, cfg).row_indices, base_candidates.row_indices)

    rows = estimate_h_star(base_data, cfg, base_candidates).row_indices
    phi = compute_phi(estimate_mu_tilde(Y, base_data, base_data.ystar[rows], cfg), base_data.ystar[rows])
    phi_scaled = compute_phi(
        estimate_mu_tilde(scaled, scaled_data, scaled_data.ystar[rows], cfg), scaled_data.ystar[rows]
    )
    np.testing.assert_allclose(phi_scaled.values, phi.values, atol=1e-8)
