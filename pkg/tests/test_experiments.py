from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypspde.experiments import (
    StudyAbort,
    StudyConfig,
    emit_report,
    fit_rate,
    run_mc_study,
    study_config_from_mapping,
    theoretical_slopes,
)
from hypspde.model import preset

GOLDEN = Path(__file__).parent / "golden"


def tiny_config(**kw):
    base = dict(spec=preset("plate_structural"), deltas=(0.1, 0.07), replicates=3, c_h=0.05, seed=2024)
    base.update(kw)
    return StudyConfig(**base)


@pytest.fixture(scope="module")
def tiny_result():
    return run_mc_study(tiny_config())


def test_fit_rate_exact_power_law():
    d = np.array([0.1, 0.07, 0.05, 0.035])
    slope, icpt, resid = fit_rate(d, 3.0 * d**1.5)
    assert abs(slope - 1.5) < 1e-12 and abs(icpt - np.log(3.0)) < 1e-12 and resid < 1e-12
    assert abs(fit_rate(d, np.full(4, 0.2))[0]) < 1e-12
    with pytest.raises(ValueError):
        fit_rate(d, [1.0, 0.0, 1.0, 1.0])


@given(st.floats(-3, 3), st.floats(0.01, 10))
def test_fit_rate_recovers_any_slope(s, c):
    d = np.array([0.2, 0.1, 0.05])
    assert fit_rate(d, c * d**s)[0] == pytest.approx(s, abs=1e-9)


def test_theoretical_slopes():
    np.testing.assert_allclose(theoretical_slopes(preset("plate_structural")), [1.5, 1.5])
    np.testing.assert_allclose(theoretical_slopes(preset("plate_weak")), [2.5, 0.5])
    np.testing.assert_allclose(theoretical_slopes(preset("plate_weak"), N_fixed=4), [2.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(deltas=())
    with pytest.raises(ValueError):
        tiny_config(deltas=(0.05, 0.1))
    with pytest.raises(ValueError):
        tiny_config(replicates=1)
    with pytest.raises(ValueError):
        tiny_config(deltas=(0.2,), N_fixed=8)


def test_study_is_deterministic_across_threads(tiny_result):
    again = run_mc_study(tiny_config(threads=3))
    for a, b in zip(tiny_result.cells, again.cells):
        np.testing.assert_array_equal(a.estimates, b.estimates)
        np.testing.assert_array_equal(a.rho_I_rho, b.rho_I_rho)


def test_rmse_dominates_bias(tiny_result):
    for c in tiny_result.cells:
        assert np.all(c.rmse(tiny_result.truth) >= np.abs(c.bias(tiny_result.truth)))


def test_failures_abort_study(monkeypatch):
    from hypspde import experiments
    from hypspde.estimator import EstimationError

    def boom(*a, **k):
        raise EstimationError("singular")

    monkeypatch.setattr(experiments, "estimate_replicate", boom)
    with pytest.raises(StudyAbort):
        run_mc_study(tiny_config(deltas=(0.1,)))


def test_report_files_match_golden(tiny_result, tmp_path):
    files = emit_report(tiny_result, tmp_path)
    for key in ("cells", "replicates", "summary", "svg"):
        golden = GOLDEN / files[key].name
        assert files[key].read_bytes() == golden.read_bytes(), key


def test_svg_has_one_reference_line_per_parameter(tiny_result, tmp_path):
    svg = emit_report(tiny_result, tmp_path)["svg"].read_text()
    assert svg.count('class="reference"') == 2
    assert 'data-param="theta1" data-slope="1.5"' in svg


def test_report_rejects_empty(tiny_result, tmp_path):
    from dataclasses import replace

    with pytest.raises(ValueError):
        emit_report(replace(tiny_result, cells=[]), tmp_path)


def test_config_from_toml_mapping():
    cfg = study_config_from_mapping({"preset": "plate_weak", "study": {"deltas": [0.1, 0.05], "replicates": 5, "N": 3}})
    assert cfg.spec.beta1 == 0.0 and cfg.N_for(0.05) == 3 and cfg.replicates == 5
    with pytest.raises(ValueError):
        study_config_from_mapping({"study": {"bogus": 1}})
