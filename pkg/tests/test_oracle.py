import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from hypspde.kernels import TruncationError, min_modes, rescale_coeffs
from hypspde.model import mode_symbol_arrays, preset
from hypspde.oracle import (
    CovRequest,
    InitialConditionError,
    analytic_covariance,
    covariance_matrix,
    fisher_limit_check,
    scaling_limit_check,
)
from hypspde.spectral import mn_arrays


def test_zero_time_gives_zero(bump):
    spec = preset("plate_structural")
    assert analytic_covariance(spec, bump, CovRequest(("u", 1), ("u", 1), 0.0, 0.7)) == 0.0


def test_single_mode_cross_covariance_matches_product_formula():
    spec = preset("wave_weak")
    from hypspde.kernels import SineCoeffs

    # one mode, unit coefficient: Cov(u(t), v(t)) = int_0^t n n' = n(t)^2 / 2
    c = SineCoeffs(delta=0.1, x=0.5, c=np.array([1.0]), norm_K=1.0, domain_length=1.0)
    with pytest.raises(TruncationError):
        analytic_covariance(spec, c, CovRequest(("u", 1), ("v", 1), 0.6, 0.6))
    lam, a, b, _ = mode_symbol_arrays(spec, np.array([1]))
    n = lambda s: float(np.ravel(mn_arrays(s, a[0], b[0])[1])[0])  # noqa: E731
    npr = lambda s: float(np.ravel(mn_arrays(s, a[0], b[0])[3])[0])  # noqa: E731
    ref = quad(lambda s: n(s) * npr(s), 0, 0.6, epsrel=1e-12)[0] * lam[0]
    from hypspde.oracle import _cross_moments

    got = lam[0] * _cross_moments(spec, 1, 0.6, 0.6)[0, 0, 1]
    assert got == pytest.approx(ref, rel=1e-8)


@given(t=st.floats(0.05, 1.0), s=st.floats(0.05, 1.0))
def test_symmetry_in_time_and_components(bump, t, s):
    spec = preset("plate_structural")
    c = rescale_coeffs(bump, 0.1, 0.5, 4 * min_modes(0.1))
    uu_ts = analytic_covariance(spec, c, CovRequest(("u", 1), ("u", 1), t, s, 0.5, 0.1))
    uu_st = analytic_covariance(spec, c, CovRequest(("u", 1), ("u", 1), s, t, 0.5, 0.1))
    assert uu_ts == pytest.approx(uu_st, rel=1e-10, abs=1e-18)
    uv = analytic_covariance(spec, c, CovRequest(("u", 1), ("v", 1), t, s, 0.5, 0.1))
    vu = analytic_covariance(spec, c, CovRequest(("v", 1), ("u", 1), s, t, 0.5, 0.1))
    assert uv == pytest.approx(vu, rel=1e-10, abs=1e-18)


@pytest.mark.parametrize("name", ["plate_structural", "plate_weak", "wave_weak"])
def test_observation_covariance_is_psd(bump, name):
    C = covariance_matrix(preset(name), bump, 0.1, 0.5, 1.0)
    w = np.linalg.eigvalsh(C)
    assert w.min() > -1e-10 * w.max()


def test_mode_cutoff_doubling_is_stable(bump):
    spec = preset("plate_structural")
    req = CovRequest(("u", 1), ("u", 1), 1.0, 1.0, 0.5, 0.1)
    K = 4 * min_modes(0.1)
    a = analytic_covariance(spec, rescale_coeffs(bump, 0.1, 0.5, K), req)
    b = analytic_covariance(spec, rescale_coeffs(bump, 0.1, 0.5, 2 * K), req)
    assert abs(a - b) < 1e-6 * abs(b)


def test_nonzero_initial_condition_rejected(bump):
    spec = preset("plate_structural", initial_u=(1.0,))
    with pytest.raises(InitialConditionError):
        analytic_covariance(spec, bump, CovRequest(("u", 1), ("u", 1), 1.0, 1.0))


def test_fisher_table_structural(bump):
    tab = fisher_limit_check(preset("plate_structural"), bump, [0.2, 0.1, 0.05])
    for q in tab.quantities():
        assert tab.decreasing(q), q


def test_fisher_table_weak_v_entry(bump):
    tab = fisher_limit_check(preset("wave_weak"), bump, [0.1, 0.02])
    assert tab.series("eta1,eta1")[-1].rel_error < 0.02


def test_scaling_tables(bump):
    tab = scaling_limit_check(preset("plate_structural"), delta_list=[0.2, 0.1, 0.05, 0.025])
    assert all(tab.decreasing(q) for q in tab.quantities())
    weak = scaling_limit_check(preset("wave_weak"), delta_list=[0.2, 0.1, 0.05, 0.025], t=0.5)
    assert all(weak.decreasing(q) for q in weak.quantities())


def test_delta_list_must_decrease(bump):
    with pytest.raises(ValueError):
        fisher_limit_check(preset("plate_structural"), bump, [0.05, 0.1])


def test_table_csv(bump, tmp_path):
    tab = fisher_limit_check(preset("plate_structural"), bump, [0.2, 0.1])
    lines = tab.write_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "quantity,delta,value,limit,rel_error" and len(lines) == 7
