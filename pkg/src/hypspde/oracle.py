"""Analytic ground truths for local measurements.

Covariances of measurements started from rest are exact mode sums:
``Cov(X_k(t), X_k(s)) = Phi_k(t - s) Q_k(s)`` for ``t >= s`` with ``Q_k`` the
integrated noise covariance, weighted by ``lambda_k^{gamma_1 + gamma_2} c_k^2``.
The convergence tables evaluate the rescaled left sides of the Fisher and
M,N-function scaling limits as exact mode sums on ``(0, L)`` and compare them
with the limiting Sobolev norms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .estimator import asymptotic_sigma, scaling_matrix
from .kernels import KernelProfile, SineCoeffs, TruncationError, laplacian_bump, min_modes, rescale_coeffs, sobolev_norm
from .model import ModelSpec, mode_symbol_arrays
from .spectral import mn_arrays, step_moments

__all__ = [
    "CovRequest",
    "ConvergenceRow",
    "ConvergenceTable",
    "InitialConditionError",
    "analytic_covariance",
    "covariance_matrix",
    "fisher_limit_check",
    "scaling_limit_check",
]

TAIL_TOL = 1e-8
MAX_MODES = 1 << 16
# relative errors below this are at the accuracy of the evaluation itself
RESOLUTION_FLOOR = 1e-9


class InitialConditionError(ValueError):
    """The covariance formulas assume the system starts at rest."""


@dataclass(frozen=True)
class CovRequest:
    """One covariance entry ``Cov(Z_1(t), Z_2(s))``.

    Components are ``("u", i)`` for ``u^{Delta_i}`` (weight ``lambda^{alpha_i}``)
    or ``("v", j)`` for ``v^{Delta_j}`` (weight ``lambda^{beta_j}``); indices
    are 1-based.
    """

    first: tuple[str, int]
    second: tuple[str, int]
    t: float
    s: float
    x: float = 0.5
    delta: float = 0.1

    def __post_init__(self) -> None:
        for kind, idx in (self.first, self.second):
            if kind not in ("u", "v") or idx < 1:
                raise ValueError("components are ('u', i) or ('v', j) with 1-based index")
        if self.t < 0 or self.s < 0:
            raise ValueError("times must be non-negative")


def _exponent(spec: ModelSpec, comp: tuple[str, int]) -> float:
    kind, idx = comp
    seq = spec.alphas if kind == "u" else spec.betas
    if idx > seq.size:
        raise ValueError(f"component {comp} exceeds the model's {kind}-type count {seq.size}")
    return float(seq[idx - 1])


def _check_rest(spec: ModelSpec) -> None:
    if any(spec.initial_u) or any(spec.initial_v):
        raise InitialConditionError("analytic covariances require a zero initial condition")


def _cross_moments(spec: ModelSpec, K: int, t: float, s: float) -> np.ndarray:
    """Per-mode ``Cov(X_k(t), X_k(s))`` as ``(K, 2, 2)``."""
    _, a, b, _ = mode_symbol_arrays(spec, np.arange(1, K + 1))
    lo, hi = min(t, s), max(t, s)
    if lo == 0:
        return np.zeros((K, 2, 2))
    sm = step_moments(lo, a, b)
    Q = np.empty((K, 2, 2))
    Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 1] = sm.q11, sm.q12, sm.q22
    Q[:, 1, 0] = sm.q12
    if hi > lo:
        m, n, mp, np_ = mn_arrays(hi - lo, a, b)
        Phi = np.stack([np.stack([m, n], -1), np.stack([mp, np_], -1)], -2)
        C = Phi @ Q
    else:
        C = Q
    return C if t >= s else np.transpose(C, (0, 2, 1))


def _mode_sum(terms: Callable[[int], np.ndarray], K0: int) -> float:
    """Sum ``terms(K)`` over modes, doubling ``K`` until the top quarter is negligible."""
    K = K0
    while True:
        t = terms(K)
        mag = np.sum(np.abs(t))
        tail = np.sum(np.abs(t[-max(1, K // 4) :]))
        if mag == 0 or tail <= TAIL_TOL * mag:
            return float(np.sum(t))
        if 2 * K > MAX_MODES:
            raise TruncationError(f"mode sum did not settle below {TAIL_TOL:g} within {MAX_MODES} modes")
        K *= 2


def analytic_covariance(
    spec: ModelSpec,
    coeffs: SineCoeffs | KernelProfile,
    req: CovRequest,
) -> float:
    """Exact ``Cov(Z_1(t), Z_2(s))`` of two local measurements at one location.

    ``coeffs`` are the sine coefficients of ``K_{delta,x}``; passing a
    :class:`KernelProfile` instead lets the mode count grow until the tail is
    below ``1e-8`` of the sum.

    Raises
    ------
    InitialConditionError
        If the model has a non-zero initial condition.
    TruncationError
        If fixed coefficients are too short for the tail rule.
    """
    _check_rest(spec)
    if isinstance(coeffs, SineCoeffs):
        if coeffs.gamma != 0:
            raise ValueError("coefficients must be those of K_{delta,x} itself")
        if abs(coeffs.x - req.x) > 1e-12 or abs(coeffs.delta - req.delta) > 1e-15:
            raise ValueError("coefficients were computed for a different location or resolution")
    g1, g2 = _exponent(spec, req.first), _exponent(spec, req.second)
    i1 = 0 if req.first[0] == "u" else 1
    i2 = 0 if req.second[0] == "u" else 1
    L = spec.domain_length

    def terms(K: int, c: np.ndarray | None = None) -> np.ndarray:
        if c is None:
            c = rescale_coeffs(coeffs, req.delta, req.x, K, L, check_truncation=False).c
        lam, *_ = mode_symbol_arrays(spec, np.arange(1, K + 1))
        C = _cross_moments(spec, K, req.t, req.s)
        return lam ** (g1 + g2) * c * c * C[:, i1, i2]

    if isinstance(coeffs, SineCoeffs):
        t = terms(coeffs.K_max, coeffs.c)
        if np.sum(np.abs(t[-max(1, coeffs.K_max // 4) :])) > TAIL_TOL * np.sum(np.abs(t)):
            raise TruncationError("coefficient tail too heavy for the covariance mode sum; pass more modes")
        return float(np.sum(t))
    return _mode_sum(terms, min_modes(req.delta, L))


def covariance_matrix(spec: ModelSpec, profile: KernelProfile, delta: float, x: float, t: float) -> np.ndarray:
    """Covariance of the observation vector ``(u^{Delta_1..p}, v^{Delta_1..q})(t)``."""
    comps = [("u", i + 1) for i in range(spec.p)] + [("v", j + 1) for j in range(spec.q)]
    n = len(comps)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = analytic_covariance(spec, profile, CovRequest(comps[i], comps[j], t, t, x, delta))
    return out


@dataclass(frozen=True)
class ConvergenceRow:
    quantity: str
    delta: float
    value: float
    limit: float
    rel_error: float


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]

    def quantities(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.quantity not in seen:
                seen.append(r.quantity)
        return seen

    def series(self, quantity: str) -> list[ConvergenceRow]:
        return [r for r in self.rows if r.quantity == quantity]

    def errors(self, quantity: str) -> np.ndarray:
        return np.array([r.rel_error for r in self.series(quantity)])

    def decreasing(self, quantity: str, floor: float = RESOLUTION_FLOOR) -> bool:
        """Errors strictly decrease until both neighbours are below ``floor``."""
        e = self.errors(quantity)
        return bool(all(b < a or max(a, b) < floor for a, b in zip(e, e[1:])))

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        lines = ["quantity,delta,value,limit,rel_error"]
        for r in self.rows:
            lines.append(f"{r.quantity},{r.delta!r},{r.value:.17g},{r.limit:.17g},{r.rel_error:.17g}")
        path.write_text("\n".join(lines) + "\n")
        return path


def _check_deltas(delta_list: Sequence[float]) -> list[float]:
    ds = [float(d) for d in delta_list]
    if len(ds) == 0 or any(b >= a for a, b in zip(ds, ds[1:])):
        raise ValueError("delta_list must be non-empty and strictly decreasing")
    return ds


def _rel(value: float, limit: float, ref: float) -> float:
    """Relative error; for a zero limit the magnitude relative to ``ref``."""
    return abs(value - limit) / (abs(limit) if limit != 0 else ref)


def fisher_limit_check(
    spec: ModelSpec,
    profile: KernelProfile,
    delta_list: Sequence[float],
    x: float | None = None,
) -> ConvergenceTable:
    """Rescaled integrated covariances against the Fisher information limit.

    For every pair of observation components the value is
    ``rho_i rho_j int_0^T Cov(Y_i(t), Y_j(t)) dt`` at a single location
    (``N = 1``), and the limit is the matching entry of ``Sigma``.  Off-diagonal
    errors with a zero limit are measured relative to the geometric mean of
    the two diagonal limits.
    """
    _check_rest(spec)
    ds = _check_deltas(delta_list)
    x = spec.domain_length / 2 if x is None else x
    T, L = spec.horizon, spec.domain_length
    sigma = asymptotic_sigma(spec, profile, T).sigma
    p, q = spec.p, spec.q
    names = [f"theta{i + 1}" for i in range(p)] + [f"eta{j + 1}" for j in range(q)]
    expo = np.concatenate([spec.alphas, spec.betas])
    slot = [0] * p + [1] * q
    rows = []
    for d in ds:
        rho = np.diag(scaling_matrix(spec, d, 1))
        for i in range(p + q):
            for j in range(i, p + q):

                def terms(K: int, i=i, j=j) -> np.ndarray:
                    lam, a, b, _ = mode_symbol_arrays(spec, np.arange(1, K + 1))
                    c = rescale_coeffs(profile, d, x, K, L, check_truncation=False).c
                    sm = step_moments(T, a, b, "ramp")
                    Qi = {(0, 0): sm.q11, (1, 1): sm.q22, (0, 1): sm.q12, (1, 0): sm.q12}[(slot[i], slot[j])]
                    return lam ** (expo[i] + expo[j]) * c * c * Qi

                val = rho[i] * rho[j] * _mode_sum(terms, min_modes(d, L))
                lim = sigma[i, j]
                ref = math.sqrt(sigma[i, i] * sigma[j, j])
                rows.append(ConvergenceRow(f"{names[i]},{names[j]}", d, val, lim, _rel(val, lim, ref)))
    return ConvergenceTable(rows)


def scaling_limit_check(
    spec: ModelSpec,
    profile: KernelProfile | None = None,
    delta_list: Sequence[float] = (0.2, 0.1, 0.05, 0.025),
    t: float | None = None,
    x: float | None = None,
) -> ConvergenceTable:
    """Rescaled M,N-function quadratic forms against their limits.

    The test function is ``z = (d/dy)^{2r} K`` with ``r = ceil(alpha_1)``
    (default), which makes every negative-order Sobolev norm below finite.
    With structural damping (``beta_1 > 0``) the rows are

    * ``int_NN``: ``delta^{-2 alpha_1 - 2 beta_1} sum c_k^2 int_0^t n_k^2``
      against ``||(-Delta)^{-(alpha_1+beta_1)/2} z||^2 / (2 theta_1 eta_1)``;
    * ``int_N'N'``: ``delta^{-2 beta_1} sum c_k^2 int_0^t n_k'^2`` against
      ``-||(-Delta)^{-beta_1/2} z||^2 / (2 eta_1)``;
    * ``int_NN'``: the mixed form, scaled by ``delta^{-alpha_1 - 2 beta_1}``,
      with limit 0.

    With weak damping (``beta_1 = 0``) the rows are the equipartition limits
    at time ``t``: ``delta^{-2 alpha_1} sum c_k^2 n_k(t)^2`` against
    ``-e^{eta_1 t} ||(-Delta)^{-alpha_1/2} z||^2 / (2 theta_1)``,
    ``sum c_k^2 m_k(t)^2`` against ``e^{eta_1 t} ||z||^2 / 2`` and the mixed
    form ``delta^{-alpha_1} sum c_k^2 n_k(t) m_k(t)`` with limit 0.

    On ``(0, L)`` these fixed-time limits only show once waves leaving the
    support have not yet been reflected back by the boundary, so ``t`` should
    satisfy ``sqrt(-theta_1) t < x - delta`` for wave-type models.  For
    dispersive elastic exponents (``alpha_1 > 1``) the discrete spectrum
    produces revivals and the fixed-time errors need not be monotone.
    """
    _check_rest(spec)
    ds = _check_deltas(delta_list)
    z = profile if profile is not None else laplacian_bump(int(math.ceil(spec.alpha1)))
    t = spec.horizon if t is None else t
    x = spec.domain_length / 2 if x is None else x
    L = spec.domain_length
    a1, b1, th1, et1 = spec.alpha1, spec.beta1, spec.theta1, spec.eta1

    def modes(K: int, d: float):
        _, a, b, _ = mode_symbol_arrays(spec, np.arange(1, K + 1))
        c = rescale_coeffs(z, d, x, K, L, check_truncation=False).c
        return a, b, c * c

    rows = []
    if b1 > 0:
        lim_nn = sobolev_norm(z, -(a1 + b1) / 2) / (2 * th1 * et1)
        lim_pp = -sobolev_norm(z, -b1 / 2) / (2 * et1)
        ref = math.sqrt(lim_nn * lim_pp)
        for d in ds:

            def f_nn(K, d=d):
                a, b, w = modes(K, d)
                return w * step_moments(t, a, b).q11

            def f_pp(K, d=d):
                a, b, w = modes(K, d)
                return w * step_moments(t, a, b).q22

            def f_np(K, d=d):
                a, b, w = modes(K, d)
                return w * step_moments(t, a, b).q12

            K0 = min_modes(d, L)
            v = d ** (-2 * a1 - 2 * b1) * _mode_sum(f_nn, K0)
            rows.append(ConvergenceRow("int_NN", d, v, lim_nn, _rel(v, lim_nn, ref)))
            v = d ** (-2 * b1) * _mode_sum(f_pp, K0)
            rows.append(ConvergenceRow("int_N'N'", d, v, lim_pp, _rel(v, lim_pp, ref)))
            v = d ** (-a1 - 2 * b1) * _mode_sum(f_np, K0)
            rows.append(ConvergenceRow("int_NN'", d, v, 0.0, _rel(v, 0.0, ref)))
    else:
        lim_n = -math.exp(et1 * t) * sobolev_norm(z, -a1 / 2) / (2 * th1)
        lim_m = math.exp(et1 * t) * z.norm_sq / 2
        ref = math.sqrt(lim_n * lim_m)
        for d in ds:

            def f_nn(K, d=d):
                a, b, w = modes(K, d)
                return w * mn_arrays(t, a, b)[1] ** 2

            def f_mm(K, d=d):
                a, b, w = modes(K, d)
                return w * mn_arrays(t, a, b)[0] ** 2

            def f_nm(K, d=d):
                a, b, w = modes(K, d)
                m, n, _, _ = mn_arrays(t, a, b)
                return w * m * n

            K0 = min_modes(d, L)
            v = d ** (-2 * a1) * _mode_sum(f_nn, K0)
            rows.append(ConvergenceRow("NN(t)", d, v, lim_n, _rel(v, lim_n, ref)))
            v = _mode_sum(f_mm, K0)
            rows.append(ConvergenceRow("MM(t)", d, v, lim_m, _rel(v, lim_m, ref)))
            v = d ** (-a1) * _mode_sum(f_nm, K0)
            rows.append(ConvergenceRow("NM(t)", d, v, 0.0, _rel(v, 0.0, ref)))
    return ConvergenceTable(rows)
