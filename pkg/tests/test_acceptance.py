# tests/test_acceptance.py
"""End-to-end properties of the estimator on synthetic data with known truth."""
import numpy as np
import pytest

from conftest import planted
from geoapportion.config import EstimatorConfig, StudyDesign
from geoapportion.estimator import apportion, estimate_mu_tilde, row_normalize
from geoapportion.evaluation import align_rows, convergence_study, nfd, nrmse, records_frame
from geoapportion.models import ConcentrationMatrix
from geoapportion.synthgen import RngSpec, make_ground_truth

SEEDS = range(20)
# frozen from pilot runs; the median at n = 10000 sits well below it
NRMSE_THRESHOLD_AT_10K = 0.25


def _aligned(phi_ref, phi_hat):
    return phi_hat[align_rows(phi_ref, phi_hat).permutation]


@pytest.mark.parametrize("seed", SEEDS)
def test_exact_recovery_with_planted_corners(seed):
    Y, truth = planted(seed)
    est = apportion(Y, EstimatorConfig(K=3))
    phi_hat = _aligned(truth.phi_sample.values, est.phi_hat.values)
    assert np.max(np.abs(phi_hat - truth.phi_sample.values)) <= 1e-8


@pytest.mark.parametrize("seed", SEEDS)
def test_column_units_do_not_change_the_attribution(seed):
    Y, _ = planted(seed)
    sigma = 10.0 ** np.random.default_rng(1000 + seed).uniform(-3, 3, size=Y.J)
    base = apportion(Y, EstimatorConfig(K=3)).phi_hat.values
    scaled = apportion(Y.scaled(sigma), EstimatorConfig(K=3)).phi_hat.values
    np.testing.assert_allclose(_aligned(base, scaled), base, atol=1e-8)


@pytest.mark.parametrize("seed", SEEDS)
def test_known_profiles_give_column_means_of_scaled_emissions(seed):
    _, truth = make_ground_truth(1000, 8, 3, "mixture", RngSpec.for_replicate(seed, 3))
    d = np.random.default_rng(seed).uniform(0.2, 5.0, size=3)
    Y = ConcentrationMatrix(truth.W @ (d[:, None] * truth.h_star))
    m_tilde = estimate_mu_tilde(Y, row_normalize(Y), truth.h_star, EstimatorConfig(K=3))
    np.testing.assert_allclose(m_tilde, (truth.W * d).mean(axis=0), rtol=0, atol=1e-10)


@pytest.mark.parametrize("process", ["ar1", "mixture"])
@pytest.mark.parametrize("search", ["greedy", "exhaustive"])
@pytest.mark.parametrize("mean_method", ["affine", "projected"])
def test_emitted_matrices_are_stochastic(process, search, mean_method):
    Y, _ = make_ground_truth(500, 8, 3, process, RngSpec.for_replicate(17, 0))
    est = apportion(Y, EstimatorConfig(K=3, search=search, mean_method=mean_method))
    np.testing.assert_allclose(est.phi_hat.values.sum(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(est.h_star_hat.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(est.phi_hat.values >= 0) and np.all(est.h_star_hat >= 0)
    assert np.all(est.m_tilde >= 0)


# ---------------------------------------------------------
#  LONG-RUNNING
# ---------------------------------------------------------
@pytest.mark.slow
def test_errors_shrink_with_sample_size():
    design = StudyDesign(J=8, K=3, n_grid=(100, 300, 1500, 10000), replicates=50, search="greedy")
    frame = records_frame(convergence_study(design, workers=8))
    assert frame["error"].isna().all()
    medians = frame.groupby("n")[["nrmse", "nfd"]].median().sort_index()
    assert medians["nrmse"].is_monotonic_decreasing and medians["nrmse"].is_unique
    assert medians["nfd"].is_monotonic_decreasing and medians["nfd"].is_unique
    assert medians.loc[10000, "nrmse"] <= NRMSE_THRESHOLD_AT_10K


@pytest.mark.slow
def test_greedy_matches_exhaustive_accuracy():
    design = StudyDesign(J=8, K=3, n_grid=(100, 300), replicates=50, search="both")
    frame = records_frame(convergence_study(design, workers=8))
    wide = frame.pivot_table(index=["n", "replicate"], columns="search_used", values=["log_volume", "nrmse"])
    assert (wide["log_volume"]["exhaustive"] >= wide["log_volume"]["greedy"] - 1e-12).all()
    gap = (wide["nrmse"]["greedy"] - wide["nrmse"]["exhaustive"]).abs()
    assert gap.median() <= 0.01


@pytest.mark.slow
def test_full_scale_single_replicate():
    Y, truth = make_ground_truth(500_000, 8, 3, "ar1", RngSpec.for_replicate(0, 0))
    est = apportion(Y, EstimatorConfig(K=3, search="greedy"))
    phi_hat = _aligned(truth.phi_true.values, est.phi_hat.values)
    assert nrmse(truth.phi_true.values, phi_hat) <= 0.10
    assert nfd(truth.phi_true.values, phi_hat) <= 0.18
