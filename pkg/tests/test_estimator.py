import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypspde.estimator import (
    EstimationError,
    StatsAccumulator,
    asymptotic_sigma,
    c_constant,
    fisher_matrix,
    mle,
    scaling_matrix,
    solve_estimate,
    write_report_txt,
)
from hypspde.kernels import min_modes
from hypspde.measurements import extract_measurements, make_placement
from hypspde.model import preset
from hypspde.spectral import TimeGrid, simulate_exact
from hypspde.stream import ReplicateDesign, estimate_replicate


@pytest.fixture(scope="module")
def structural_sets(bump):
    spec = preset("plate_structural")
    p = simulate_exact(spec, min_modes(0.1), TimeGrid(1.0, 8000), seed=1)
    return spec, extract_measurements(p, make_placement(5, 0.1), bump, spec)


def test_c_constant_values():
    assert c_constant(0.0, 1.0) == 0.25
    assert c_constant(-1.0, 1.0) == pytest.approx((math.exp(-1) + 1 - 1) / 2, rel=1e-12)
    for e in (1e-5, -1e-5, 1e-7, -3e-9):
        assert abs(c_constant(e, 1.0) - 0.25) < 1e-5
    assert abs(c_constant(1e-4 * (1 - 1e-12), 1.0) - c_constant(1e-4 * (1 + 1e-12), 1.0)) < 1e-8


def test_scaling_matrix_exponents():
    spec = preset("plate_structural")
    rho = scaling_matrix(spec, 0.1, 4)
    np.testing.assert_allclose(np.diag(rho), [0.5 * 0.1, 0.5 * 0.1])
    rho_w = scaling_matrix(preset("plate_weak"), 0.1, 1)
    np.testing.assert_allclose(np.diag(rho_w), [0.01, 1.0])


def test_sigma_structural_closed_form(bump):
    from hypspde.kernels import sobolev_norm

    sig = asymptotic_sigma(preset("plate_structural"), bump)
    assert sig.sigma[0, 0] == pytest.approx(1 / (2 * 0.09) * sobolev_norm(bump, 0.5), rel=1e-12)
    assert sig.sigma[1, 1] == pytest.approx(1 / 0.6 * sobolev_norm(bump, 0.5), rel=1e-12)
    np.testing.assert_allclose(sig.clt_cov, bump.norm_sq * np.linalg.inv(sig.sigma))


def test_sigma_weak_uses_c_constant(bump):
    sig = asymptotic_sigma(preset("plate_weak"), bump)
    assert sig.sigma[1, 1] == pytest.approx(c_constant(-0.3, 1.0) * bump.norm_sq, rel=1e-12)


def test_fisher_matches_theory(structural_sets, bump):
    spec, ms = structural_sets
    rep = mle(ms, spec=spec, profile=bump, truth=spec.params)
    rIr = rep.rho_I_rho
    np.testing.assert_allclose(np.diag(rIr), np.diag(rep.sigma_theory), rtol=0.1)


def test_location_order_invariance(structural_sets):
    spec, ms = structural_sets
    a = mle(ms, spec=spec)
    b = mle(ms[::-1], spec=spec)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    np.testing.assert_array_equal(fisher_matrix(ms).I, fisher_matrix(ms[::-1]).I)


def test_streaming_equals_batch(structural_sets, bump):
    spec, ms = structural_sets
    design = ReplicateDesign(spec, make_placement(5, 0.1), TimeGrid(1.0, 8000), min_modes(0.1))
    rep = estimate_replicate(design, bump, 1, (0,), block=777)
    np.testing.assert_allclose(rep.estimate, mle(ms, spec=spec).estimate, rtol=1e-12)


def test_zero_noise_identification(bump):
    spec = preset("plate_structural", initial_u=(1.0, 0.5, 0.2), initial_v=(0.0, 1.0))
    p = simulate_exact(spec, min_modes(0.1), TimeGrid(1.0, 1000), seed=0, noise=False)
    rep = mle(extract_measurements(p, make_placement(5, 0.1), bump, spec), spec=spec)
    np.testing.assert_allclose(rep.estimate, spec.params, rtol=1e-3)


def test_martingale_term_recovers_error(structural_sets):
    spec, ms = structural_sets
    rep = mle(ms, spec=spec, truth=spec.params)
    # F (est - truth) = ||K|| M
    np.testing.assert_allclose(rep.drift @ rep.error, ms[0].norm_K * rep.martingale, rtol=1e-8, atol=1e-14)


def test_ill_conditioned_rejected():
    F = np.diag([1.0, 1e-14])
    with pytest.raises(EstimationError):
        solve_estimate(F, np.ones(2), np.eye(2))


@given(st.lists(st.integers(1, 60), min_size=1, max_size=5))
def test_accumulator_chunking_invariance(cuts):
    rng = np.random.default_rng(0)
    n = 64
    arrs = [rng.normal(size=(1, 2, n + 1)), rng.normal(size=(1, 2, n + 1)), rng.normal(size=(1, 2, n + 1)),
            rng.normal(size=(1, 2, n + 1)), rng.normal(size=(2, n + 1))]
    whole = StatsAccumulator(1, 1, 2, 0.01)
    whole.add(*arrs)
    parts = StatsAccumulator(1, 1, 2, 0.01)
    edges = sorted(set([0] + [c for c in cuts if c < n] + [n]))
    for a, b in zip(edges, edges[1:]):
        parts.add(*[x[..., a : b + 1] for x in arrs])
    for key in ("I", "F_hermite", "score", "qv"):
        np.testing.assert_allclose(parts.totals()[key], whole.totals()[key], rtol=1e-12, atol=1e-14)
    assert parts.n_steps == whole.n_steps == n


def test_report_text(structural_sets, tmp_path, bump):
    spec, ms = structural_sets
    path = write_report_txt(mle(ms, spec=spec, profile=bump, truth=spec.params), tmp_path / "r.txt")
    text = path.read_text()
    assert "theta1_hat = " in text and "sigma[eta1,eta1]" in text
