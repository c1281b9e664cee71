import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from hypspde import _core_py
from hypspde.model import ModeSymbol, mode_symbol_arrays, preset
from hypspde.spectral import (
    FactorizationError,
    ModePaths,
    TimeGrid,
    euler_moments,
    exact_moments,
    factor_cov,
    mn_arrays,
    mn_scalar,
    read_paths_binary,
    simulate_euler,
    simulate_exact,
    step_moments,
    transition,
    transition_arrays,
    write_paths_binary,
)

# symbols covering oscillatory, overdamped and near-critical modes
symbol_strategy = st.tuples(st.floats(-400.0, -0.01), st.floats(-30.0, 0.0)).map(lambda ab: ModeSymbol.from_ab(*ab))


def _mn(t, a, b):
    return [float(np.ravel(x)[0]) for x in mn_arrays(t, a, b)]


def _phi(t, a, b):
    m, n, mp, np_ = _mn(t, a, b)
    return np.array([[m, n], [mp, np_]])


def _q_quad(t, a, b):
    def nn(s):
        return _mn(s, a, b)[1]

    def nnp(s):
        return _mn(s, a, b)[3]

    q11 = quad(lambda s: nn(s) ** 2, 0, t, epsabs=0, epsrel=1e-12, limit=200)[0]
    q22 = quad(lambda s: nnp(s) ** 2, 0, t, epsabs=0, epsrel=1e-12, limit=200)[0]
    # int_0^t n n' = n(t)^2 / 2
    q12 = nn(t) ** 2 / 2
    return np.array([[q11, q12], [q12, q22]])


def test_harmonic_closed_forms():
    v = mn_scalar(math.pi / 2, ModeSymbol.from_ab(-1.0, 0.0))
    assert v.m == pytest.approx(0, abs=1e-15)
    assert v.n == pytest.approx(1)
    _, Q = transition(math.pi, ModeSymbol.from_ab(-1.0, 0.0))
    np.testing.assert_allclose(Q, [[math.pi / 2, 0], [0, math.pi / 2]], atol=1e-13)


def test_critical_branch_is_continuous():
    a = -4.0
    vals = [_mn(0.7, a, b)[1] for b in (-4.0 * (1 - 1e-10), -4.0, -4.0 * (1 + 1e-10))]
    assert max(vals) - min(vals) < 1e-9
    assert vals[1] == pytest.approx(0.7 * math.exp(-2.0 * 0.7), rel=1e-12)


@given(sym=symbol_strategy, t=st.floats(0.001, 1.0))
def test_wronskian(sym, t):
    P = _phi(t, sym.a, sym.b)
    assert np.linalg.det(P) == pytest.approx(math.exp(sym.b * t), rel=1e-8, abs=1e-12)


@given(sym=symbol_strategy, t=st.floats(0.01, 0.5), s=st.floats(0.01, 0.5))
def test_semigroup_flow(sym, t, s):
    lhs = _phi(t + s, sym.a, sym.b)
    rhs = _phi(t, sym.a, sym.b) @ _phi(s, sym.a, sym.b)
    scale = np.abs(_phi(t, sym.a, sym.b)).max() * np.abs(_phi(s, sym.a, sym.b)).max()
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * scale)


@given(sym=symbol_strategy, t=st.floats(0.01, 0.5), s=st.floats(0.01, 0.5))
def test_q_composition(sym, t, s):
    _, Qts = transition_arrays(t + s, sym.a, sym.b)
    _, Qt = transition_arrays(t, sym.a, sym.b)
    Ps, Qs = transition_arrays(s, sym.a, sym.b)
    rhs = Ps[0] @ Qt[0] @ Ps[0].T + Qs[0]
    scale = np.sqrt(np.outer(np.diag(Qts[0]), np.diag(Qts[0])))
    np.testing.assert_array_less(np.abs(Qts[0] - rhs), 1e-9 * scale + 1e-300)


@pytest.mark.parametrize(
    "a,b,h",
    [(-1.0, 0.0, 1.0), (-97.4, -2.96, 0.3), (-9.0e4, -30.0, 0.01), (-25.0, -10.0, 0.2), (-1e6, -1e3, 1e-3), (-3.0, -0.01, 5.0)],
)
def test_q_matches_quadrature(a, b, h):
    _, Q = transition_arrays(h, a, b)
    ref = _q_quad(h, a, b)
    scale = np.sqrt(np.outer(np.diag(ref), np.diag(ref)))
    np.testing.assert_array_less(np.abs(Q[0] - ref), 1e-9 * scale)


def test_cross_integral_identity():
    a, b, t = -30.0, -1.5, 0.8
    ref = quad(lambda s: _mn(s, a, b)[1] * _mn(s, a, b)[3], 0, t, epsrel=1e-12)[0]
    assert ref == pytest.approx(_mn(t, a, b)[1] ** 2 / 2, rel=1e-10)


def test_ramp_weight_integrates_covariance_in_time():
    a, b, T = -97.4, -2.96, 1.0
    ramp = step_moments(T, a, b, "ramp")
    ref = quad(lambda t: step_moments(t, a, b).q11[0] if t > 0 else 0.0, 0, T, epsrel=1e-11, limit=200)[0]
    assert ramp.q11[0] == pytest.approx(ref, rel=1e-8)
    assert ramp.q12[0] == pytest.approx(step_moments(T, a, b).q11[0] / 2, rel=1e-14)


@given(sym=symbol_strategy, h=st.floats(1e-5, 0.5))
def test_step_covariance_is_psd_and_factorizes(sym, h):
    _, Q = transition_arrays(h, sym.a, sym.b)
    L = factor_cov(Q)
    np.testing.assert_allclose(L[0] @ L[0].T, Q[0], rtol=1e-9, atol=1e-12 * np.trace(Q[0]))


def test_indefinite_covariance_rejected():
    with pytest.raises(FactorizationError):
        factor_cov(np.array([[[1.0, 2.0], [2.0, 1.0]]]))


def test_euler_converges_at_first_order():
    spec = preset("plate_structural")
    ks = np.arange(1, 4)
    _, a, b, _ = mode_symbol_arrays(spec, ks)
    Q = exact_moments(spec, ks, 1.0)
    gaps = []
    for h in (1e-3, 5e-4):
        E = euler_moments(h, a, b, int(round(1 / h)))
        gaps.append(np.abs(E[:, 1, 1] / Q[:, 1, 1] - 1))
    np.testing.assert_allclose(gaps[1] / gaps[0], 0.5, atol=0.05)


def test_backends_agree_bitwise():
    from hypspde import _backend

    if _backend.BACKEND != "compiled":
        pytest.skip("compiled core not built")
    from hypspde._core import advance_block as compiled

    rng = np.random.default_rng(0)
    K, B = 7, 33
    coeffs = [rng.normal(size=K) for _ in range(7)]
    z = rng.normal(size=(K, B, 2))
    outs = []
    for fn in (compiled, _core_py.advance_block):
        u, v = rng.normal(size=K), rng.normal(size=K)
        u0, v0 = u.copy(), v.copy()
        U, V = np.empty((K, B)), np.empty((K, B))
        fn(*coeffs, u0, v0, z, U, V)
        outs.append((U, V, u0, v0))
        rng = np.random.default_rng(0)
        coeffs = [rng.normal(size=K) for _ in range(7)]
        z = rng.normal(size=(K, B, 2))
    for x, y in zip(outs[0], outs[1]):
        np.testing.assert_array_equal(x, y)


def test_simulation_is_deterministic_and_block_invariant():
    spec = preset("wave_weak")
    grid = TimeGrid(1.0, 500)
    p1 = simulate_exact(spec, 12, grid, seed=7, block=64)
    p2 = simulate_exact(spec, 12, grid, seed=7, block=500)
    np.testing.assert_array_equal(p1.u, p2.u)
    np.testing.assert_array_equal(p1.v, p2.v)
    p3 = simulate_exact(spec, 12, grid, seed=8)
    assert not np.array_equal(p1.u, p3.u)


def test_modes_are_independent_of_truncation():
    spec = preset("plate_structural")
    grid = TimeGrid(1.0, 100)
    small = simulate_exact(spec, 5, grid, seed=3)
    big = simulate_exact(spec, 20, grid, seed=3)
    np.testing.assert_array_equal(small.u, big.u[:5])


def test_zero_noise_is_deterministic_flow():
    spec = preset("plate_structural", initial_u=(1.0,), initial_v=(0.5,))
    grid = TimeGrid(1.0, 50)
    p = simulate_exact(spec, 1, grid, seed=0, noise=False)
    _, a, b, _ = mode_symbol_arrays(spec, np.array([1]))
    P = _phi(1.0, a[0], b[0])
    np.testing.assert_allclose([p.u[0, -1], p.v[0, -1]], P @ [1.0, 0.5], rtol=1e-10)


def test_single_mode_variance_monte_carlo():
    spec = preset("plate_structural")
    R = 4000
    finals = np.array([simulate_exact(spec, 1, TimeGrid(1.0, 1), seed=11, replicate=r).u[0, -1] for r in range(R)])
    target = exact_moments(spec, [1], 1.0)[0, 0, 0]
    se = target * math.sqrt(2 / (R - 1))
    assert abs(np.var(finals, ddof=1) - target) < 3.5 * se


def test_euler_path_variance_matches_euler_law():
    spec = preset("wave_weak")
    h, n, R = 0.01, 100, 3000
    _, a, b, _ = mode_symbol_arrays(spec, np.array([1]))
    finals = np.array([simulate_euler(spec, 1, TimeGrid(1.0, n), seed=5, replicate=r).v[0, -1] for r in range(R)])
    target = euler_moments(h, a, b, n)[0, 1, 1]
    assert abs(np.var(finals, ddof=1) - target) < 3.5 * target * math.sqrt(2 / (R - 1))


def test_binary_roundtrip(tmp_path):
    p = simulate_exact(preset("wave_weak"), 4, TimeGrid(0.5, 20), seed=2)
    path = write_paths_binary(p, tmp_path / "p.bin")
    q = read_paths_binary(path)
    assert isinstance(q, ModePaths)
    np.testing.assert_array_equal(p.u, q.u)
    np.testing.assert_array_equal(p.v, q.v)
    assert q.seed == 2 and q.grid.T == 0.5


GOLDEN_PATHS = Path(__file__).parent / "golden" / "paths_plate_structural.csv"
_GOLDEN_SCRIPT = (
    "import sys\n"
    "from hypspde import BACKEND\n"
    "from hypspde.model import preset\n"
    "from hypspde.spectral import TimeGrid, simulate_exact, write_paths_csv\n"
    "write_paths_csv(simulate_exact(preset('plate_structural'), 6, TimeGrid(1.0, 40), seed=99, block=16), sys.argv[1])\n"
    "print(BACKEND)\n"
)


@pytest.mark.parametrize("pure", ["0", "1"])
def test_paths_match_golden_file_on_both_backends(tmp_path, pure):
    out = tmp_path / "paths.csv"
    env = dict(os.environ, HYPSPDE_PURE_PYTHON=pure)
    res = subprocess.run([sys.executable, "-c", _GOLDEN_SCRIPT, str(out)], env=env, capture_output=True, text=True, check=True)
    if pure == "1":
        assert res.stdout.strip() == "python"
    assert out.read_bytes() == GOLDEN_PATHS.read_bytes()
