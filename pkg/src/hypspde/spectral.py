"""Mode-wise simulation of the second-order system.

In the sine basis every mode solves the scalar damped oscillator

    du = v dt,   dv = (a u + b v) dt + dW,

whose fundamental solution is given by the scalar M,N-functions.  The exact
integrator samples the Gaussian transition ``X_{n+1} = Phi X_n + xi_n`` with
``xi_n ~ N(0, Q(h))``; the Euler integrator is the semi-implicit scheme with
implicit drift and explicit noise.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy import integrate, special

from . import _backend
from .model import ModelSpec, ModeSymbol, mode_symbol_arrays

__all__ = [
    "TimeGrid",
    "ModePaths",
    "MNValues",
    "StepMoments",
    "FactorizationError",
    "StepSizeError",
    "mn_scalar",
    "mn_arrays",
    "step_moments",
    "transition",
    "transition_arrays",
    "factor_cov",
    "euler_matrices",
    "euler_moments",
    "exact_moments",
    "mode_streams",
    "advance_paths",
    "step_dynamics",
    "INTEGRATORS",
    "simulate_exact",
    "simulate_euler",
    "write_paths_binary",
    "read_paths_binary",
    "write_paths_csv",
]

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0
ELL_EPS = 1e-8
SERIES_RADIUS = 0.5
SERIES_TERMS = 32
MAX_DIGIT_LOSS = 6.0
CLIP_REL = 1e-12
DEFAULT_BLOCK = 2048


class FactorizationError(ArithmeticError):
    """Transition covariance is numerically indefinite."""


class StepSizeError(ValueError):
    """The semi-implicit update matrix is singular for the requested step."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass
class ModePaths:
    """Sine-coefficient trajectories ``u[k-1, n] = u_k(t_n)`` and ``v`` alike."""

    grid: TimeGrid
    u: np.ndarray
    v: np.ndarray
    seed: int | None
    replicate: int = 0
    integrator: str = "exact"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.u.shape != self.v.shape or self.u.shape[1] != self.grid.n_steps + 1:
            raise ValueError("path arrays must have shape (K_max, n_steps + 1)")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise FloatingPointError("non-finite values in mode paths")

    @property
    def K_max(self) -> int:
        return self.u.shape[0]

    @property
    def values(self) -> np.ndarray:
        """Array of shape ``(K_max, n_steps + 1, 2)`` holding ``(u_k, v_k)``."""
        return np.stack([self.u, self.v], axis=-1)


@dataclass(frozen=True)
class MNValues:
    m: float
    n: float
    m_prime: float
    n_prime: float


# ---------------------------------------------------------------------------
# M,N-functions


def _sinc_series(x: np.ndarray, odd: bool) -> np.ndarray:
    """``sum_j x^j / (2j+1)!`` (odd) or ``sum_j x^j / (2j)!``."""
    term = np.ones_like(x)
    out = term.copy()
    for j in range(1, 40):
        denom = (2 * j) * (2 * j + 1) if odd else (2 * j - 1) * (2 * j)
        term = term * x / denom
        out = out + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(out)):
            break
    return out


def mn_arrays(t, a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``(m, n, m', n')`` at time ``t`` for symbols ``(a, b)``.

    Raises
    ------
    OverflowError
        If ``b t / 2`` (or the hyperbolic growth exponent) exceeds 700.
    """
    t, a, b = np.broadcast_arrays(
        np.asarray(t, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if np.any(b * t / 2 > EXP_LIMIT):
        raise OverflowError("b t / 2 exceeds the floating-point exponent range")
    ell = -a - b * b / 4
    eps = ELL_EPS * np.maximum(1.0, b * b)
    S = np.empty(t.shape)
    C = np.empty(t.shape)

    pos = ell > eps
    if np.any(pos):
        w = np.sqrt(ell[pos])
        damp = np.exp(b[pos] * t[pos] / 2)
        S[pos] = damp * np.sin(w * t[pos]) / w
        C[pos] = damp * np.cos(w * t[pos])

    neg = ell < -eps
    if np.any(neg):
        w = np.sqrt(-ell[neg])
        tt, bb = t[neg], b[neg]
        grow = (bb / 2 + w) * tt
        if np.any(grow > EXP_LIMIT):
            raise OverflowError("hyperbolic growth exceeds the floating-point exponent range")
        wt = w * tt
        # e^{(b/2 + w) t} (1 -/+ e^{-2 w t}) / 2 avoids overflow of sinh for large w t
        e_hi = np.exp(grow)
        e_ratio = np.exp(-2 * wt)
        S[neg] = np.where(wt < 1.0, np.exp(bb * tt / 2) * np.sinh(wt) / w, e_hi * (-np.expm1(-2 * wt)) / (2 * w))
        C[neg] = e_hi * (1 + e_ratio) / 2

    mid = ~(pos | neg)
    if np.any(mid):
        tt = t[mid]
        x = -ell[mid] * tt * tt
        damp = np.exp(b[mid] * tt / 2)
        S[mid] = damp * tt * _sinc_series(x, odd=True)
        C[mid] = damp * _sinc_series(x, odd=False)

    n = S
    m = C - (b / 2) * S
    n_prime = C + (b / 2) * S
    return m, n, a * n, n_prime


def mn_scalar(t: float, sym: ModeSymbol) -> MNValues:
    """Scalar M,N-functions of one mode at time ``t``."""
    if not all(math.isfinite(v) for v in (sym.a, sym.b)):
        raise ValueError("mode symbol must be finite")
    m, n, mp, np_ = (float(x) for x in mn_arrays(t, sym.a, sym.b))
    return MNValues(m=m, n=n, m_prime=mp, n_prime=np_)


# ---------------------------------------------------------------------------
# Transition moments


@dataclass(frozen=True)
class StepMoments:
    """Per-mode quantities of one step of length ``h``.

    ``q11 = int w n^2``, ``q12 = int w n n'``, ``q22 = int w n'^2`` over
    ``[0, h]`` with weight ``w(s) = 1`` ("flat") or ``w(s) = h - s`` ("ramp").
    ``method`` holds 0 (series), 1 (closed form) or 2 (quadrature fallback).
    """

    h: float
    weight: str
    m: np.ndarray
    n: np.ndarray
    m_prime: np.ndarray
    n_prime: np.ndarray
    q11: np.ndarray
    q12: np.ndarray
    q22: np.ndarray
    method: np.ndarray

    @property
    def n_fallback(self) -> int:
        return int(np.count_nonzero(self.method == 2))


def _phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = special.expm1(z[nz]) / z[nz]
    return out


def _phi2(z: np.ndarray) -> np.ndarray:
    """``(e^z - 1 - z) / z^2`` with a series for small ``|z|``."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 0.5
    if np.any(small):
        zs = z[small]
        term = np.full_like(zs, 0.5)
        acc = term.copy()
        for k in range(1, 24):
            term = term * zs / (k + 2)
            acc = acc + term
        out[small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        out[big] = (special.expm1(zb) - zb) / (zb * zb)
    return out


def _series_integrals(A: np.ndarray, B: np.ndarray, weight: str):
    J = SERIES_TERMS
    K = A.shape[0]
    c = np.zeros((K, J + 1))
    c[:, 1] = 1.0
    for j in range(J - 1):
        c[:, j + 2] = (A * c[:, j] + B * (j + 1) * c[:, j + 1]) / ((j + 1) * (j + 2))
    n_c = c[:, :J]
    np_c = c[:, 1 : J + 1] * np.arange(1, J + 1)
    i = np.arange(J)
    s = i[:, None] + i[None, :]
    H = 1.0 / (s + 1) if weight == "flat" else 1.0 / ((s + 1) * (s + 2))
    q11 = np.einsum("ki,ij,kj->k", n_c, H, n_c)
    q22 = np.einsum("ki,ij,kj->k", np_c, H, np_c)
    return q11, q22


def _closed_integrals(A: np.ndarray, B: np.ndarray, weight: str):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.sqrt((B * B / 4 + A).astype(complex))
        mu_p = B / 2 + s
        mu_m = B / 2 - s
        D = 2 * s
        exps = np.stack([mu_p, mu_m], axis=1)
        n_c = np.stack([1 / D, -1 / D], axis=1)
        np_c = np.stack([mu_p / D, -mu_m / D], axis=1)
        kappa = exps[:, :, None] + exps[:, None, :]
        if np.any(kappa.real > EXP_LIMIT):
            raise OverflowError("transition exponent exceeds the floating-point range")
        Wk = (_phi1 if weight == "flat" else _phi2)(kappa.reshape(-1)).reshape(kappa.shape)
        out, loss = [], np.zeros(A.shape[0])
        for f, g in ((n_c, n_c), (np_c, np_c)):
            terms = f[:, :, None] * g[:, None, :] * Wk
            val = terms.sum(axis=(1, 2)).real
            mag = np.abs(terms).sum(axis=(1, 2))
            loss = np.maximum(loss, np.log10(mag / np.abs(val)))
            out.append(val)
    bad = ~np.isfinite(loss) | (loss > MAX_DIGIT_LOSS) | (np.abs(D) == 0)
    return out[0], out[1], bad


def _quad_integrals(A: float, B: float, weight: str):
    def nn(tau):
        _, n, _, np_ = mn_arrays(tau, A, B)
        w = 1.0 if weight == "flat" else 1.0 - tau
        return float(n), float(np_), w

    def q(idx):
        def f(tau):
            n, np_, w = nn(tau)
            return w * (n * n, np_ * np_)[idx]

        return integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=400)[0]

    return q(0), q(1)


def step_moments(h: float, a, b, weight: str = "flat") -> StepMoments:
    """Transition matrix entries and noise covariance integrals for step ``h``.

    The computation works in the normalised time ``tau = s / h`` with symbols
    ``A = a h^2`` and ``B = b h``.  Small ``max(|B|, sqrt|A|) <= 0.5`` uses a
    Taylor expansion of ``n``; larger values use the exponential form of
    ``n`` with closed-form integrals of the exponential products.  When the
    closed form loses more than six significant digits to cancellation the
    integrals fall back to adaptive quadrature, which is logged.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    if weight not in ("flat", "ramp"):
        raise ValueError("weight must be 'flat' or 'ramp'")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    A = a * h * h
    B = b * h
    m1, n1, _, np1 = mn_arrays(1.0, A, B)
    q = np.zeros((2,) + A.shape)
    method = np.ones(A.shape, dtype=np.int8)
    r = np.maximum(np.abs(B), np.sqrt(np.abs(A)))
    ser = r <= SERIES_RADIUS
    if np.any(ser):
        q[:, ser] = np.array(_series_integrals(A[ser], B[ser], weight))
        method[ser] = 0
    clo = ~ser
    if np.any(clo):
        c11, c22, bad = _closed_integrals(A[clo], B[clo], weight)
        q[:, clo] = np.array([c11, c22])
        if np.any(bad):
            idx = np.flatnonzero(clo)[bad]
            for i in idx:
                q[:, i] = _quad_integrals(float(A[i]), float(B[i]), weight)
            method[idx] = 2
            log.info("quadrature fallback for %d of %d modes (h=%g)", idx.size, A.size, h)
    wscale = 1.0 if weight == "flat" else h
    # (n^2)' = 2 n n' gives q12 exactly; with the ramp weight, integration by
    # parts turns int (h - s) n n' ds into int n^2 ds / 2
    if weight == "flat":
        q12 = h**2 * n1 * n1 / 2
    else:
        q12 = step_moments(h, a, b, "flat").q11 / 2
    return StepMoments(
        h=h,
        weight=weight,
        m=m1,
        n=h * n1,
        m_prime=a * h * n1,
        n_prime=np1,
        q11=wscale * h**3 * q[0],
        q12=q12,
        q22=wscale * h * q[1],
        method=method,
    )


def transition_arrays(h: float, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``Phi`` and ``Q`` of shape ``(K, 2, 2)``."""
    sm = step_moments(h, a, b)
    phi = np.stack([np.stack([sm.m, sm.n], -1), np.stack([sm.m_prime, sm.n_prime], -1)], -2)
    Q = np.stack([np.stack([sm.q11, sm.q12], -1), np.stack([sm.q12, sm.q22], -1)], -2)
    return phi, Q


def transition(h: float, sym: ModeSymbol) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step transition ``(Phi, Q)`` of a single mode."""
    phi, Q = transition_arrays(h, sym.a, sym.b)
    return phi[0], Q[0]


def factor_cov(Q: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a batch of 2x2 covariances.

    Works on the correlation matrix so that the very different scales of the
    two entries (``h^3`` against ``h``) do not matter.  A slightly negative
    Schur complement (below ``1e-12 * trace``) is clipped to zero; anything
    worse raises :class:`FactorizationError`.
    """
    Q = np.asarray(Q, dtype=float)
    q11, q12, q22 = Q[..., 0, 0], 0.5 * (Q[..., 0, 1] + Q[..., 1, 0]), Q[..., 1, 1]
    tr = q11 + q22
    if np.any(q11 < -CLIP_REL * tr) or np.any(q22 < -CLIP_REL * tr):
        raise FactorizationError("negative variance on the diagonal of Q")
    q11 = np.maximum(q11, 0.0)
    q22 = np.maximum(q22, 0.0)
    d1, d2 = np.sqrt(q11), np.sqrt(q22)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(d1 * d2 > 0, q12 / (d1 * d2), 0.0)
    schur = 1.0 - rho * rho
    neg = schur < 0
    if np.any(neg):
        excess = -schur[neg] * q22[neg]
        if np.any(excess >= CLIP_REL * tr[neg]):
            raise FactorizationError("transition covariance is indefinite beyond clipping tolerance")
        schur = np.maximum(schur, 0.0)
        rho = np.clip(rho, -1.0, 1.0)
    L = np.zeros(Q.shape)
    L[..., 0, 0] = d1
    L[..., 1, 0] = rho * d2
    L[..., 1, 1] = np.sqrt(schur) * d2
    return L


def exact_moments(spec: ModelSpec, ks, t: float) -> np.ndarray:
    """Exact covariance of ``(u_k(t), v_k(t))`` from zero initial data."""
    _, a, b, _ = mode_symbol_arrays(spec, ks)
    return transition_arrays(t, a, b)[1]


def euler_matrices(h: float, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Update matrix ``G = M^{-1}`` and noise loading ``sqrt(h) G e_2``.

    The scheme reads ``v' = v + h (a u' + b v') + sqrt(h) zeta`` and
    ``u' = u + h v'``, i.e. ``M X' = X + (0, sqrt(h) zeta)`` with
    ``M = [[1, -h], [-h a, 1 - h b]]``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    det = 1.0 - h * b - h * h * a
    if np.any(np.abs(det) < 1e-12):
        bad = float(np.max(np.abs(a)))
        raise StepSizeError(
            f"semi-implicit update matrix is singular; reduce h below {0.5 / math.sqrt(bad) if bad > 0 else h / 2:.3g}"
        )
    G = np.empty(a.shape + (2, 2))
    G[..., 0, 0] = (1.0 - h * b) / det
    G[..., 0, 1] = h / det
    G[..., 1, 0] = h * a / det
    G[..., 1, 1] = 1.0 / det
    g = math.sqrt(h) * G[..., :, 1]
    return G, g


def euler_moments(h: float, a, b, n_steps: int) -> np.ndarray:
    """Exact covariance of the Euler iterate after ``n_steps`` from zero data.

    ``P_{n+1} = G P_n G^T + h G e_2 e_2^T G^T`` is composed by repeated
    squaring, so the cost is logarithmic in ``n_steps``.
    """
    G, g = euler_matrices(h, a, b)
    S = np.einsum("...i,...j->...ij", g, g)
    # affine map P -> G P G^T + S; accumulate the result in (Gr, Sr)
    Gr = np.broadcast_to(np.eye(2), G.shape).copy()
    Sr = np.zeros_like(S)
    Gp, Sp = G.copy(), S.copy()
    n = int(n_steps)
    while n:
        if n & 1:
            Sr = np.einsum("...ij,...jk,...lk->...il", Gp, Sr, Gp) + Sp
            Gr = Gp @ Gr
        n >>= 1
        if n:
            Sp = np.einsum("...ij,...jk,...lk->...il", Gp, Sp, Gp) + Sp
            Gp = Gp @ Gp
    return Sr


# ---------------------------------------------------------------------------
# Path simulation


def mode_streams(seed: int, K: int, key: tuple[int, ...] = (0,)) -> list[np.random.Generator]:
    """Independent counter-based generators for modes ``1..K``.

    Stream ``k`` is keyed by ``SeedSequence(seed, spawn_key=key + (k,))``, so
    draws do not depend on how replicates or modes are scheduled.
    """
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key) + (k,))))
        for k in range(1, K + 1)
    ]


def _noise_blocks(streams, n_steps: int, dim: int, block: int) -> Iterator[np.ndarray]:
    K = len(streams)
    done = 0
    while done < n_steps:
        B = min(block, n_steps - done)
        z = np.empty((K, B, dim))
        for k, g in enumerate(streams):
            g.standard_normal(out=z[k])
        yield z
        done += B


def advance_paths(
    phi: np.ndarray,
    load: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    n_steps: int,
    streams: list[np.random.Generator] | None,
    dim: int,
    on_block: Callable[[np.ndarray, np.ndarray, int], None],
    block: int = DEFAULT_BLOCK,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the affine recursion block by block.

    ``X_{n+1} = phi X_n + load z_n`` with ``load`` of shape ``(K, 2, 2)``
    (only the first ``dim`` columns are used).  ``on_block(U, V, start)`` is
    called with the states at steps ``start+1 .. start+B``.  With
    ``streams=None`` no noise is injected.
    """
    K = u0.shape[0]
    p11, p12 = np.ascontiguousarray(phi[:, 0, 0]), np.ascontiguousarray(phi[:, 0, 1])
    p21, p22 = np.ascontiguousarray(phi[:, 1, 0]), np.ascontiguousarray(phi[:, 1, 1])
    l11 = np.ascontiguousarray(load[:, 0, 0])
    l21 = np.ascontiguousarray(load[:, 1, 0])
    l22 = np.ascontiguousarray(load[:, 1, 1]) if dim > 1 else np.zeros(K)
    u = np.array(u0, dtype=float, copy=True)
    v = np.array(v0, dtype=float, copy=True)
    if streams is None:
        blocks = (
            np.zeros((K, min(block, n_steps - s), dim)) for s in range(0, n_steps, block)
        )
    else:
        if len(streams) != K:
            raise ValueError("need one stream per mode")
        blocks = _noise_blocks(streams, n_steps, dim, block)
    start = 0
    for z in blocks:
        B = z.shape[1]
        U = np.empty((K, B))
        V = np.empty((K, B))
        _backend.advance_block(p11, p12, p21, p22, l11, l21, l22, u, v, z, U, V)
        on_block(U, V, start)
        start += B
    return u, v


INTEGRATORS = ("exact", "euler")


def step_dynamics(spec: ModelSpec, K_max: int, h: float, integrator: str = "exact"):
    """One-step map ``(phi, load, dim)`` for modes ``1..K_max``.

    ``exact`` uses the transition matrix and a Cholesky factor of the step
    covariance (two normals per step); ``euler`` uses semi-implicit Euler with
    one normal per step.
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if integrator not in INTEGRATORS:
        raise ValueError(f"integrator must be one of {INTEGRATORS}")
    _, a, b, _ = mode_symbol_arrays(spec, np.arange(1, K_max + 1))
    if integrator == "exact":
        phi, Q = transition_arrays(h, a, b)
        return phi, factor_cov(Q), 2
    phi, g = euler_matrices(h, a, b)
    load = np.zeros((K_max, 2, 2))
    load[:, :, 0] = g
    return phi, load, 1


def _simulate(spec, K_max, grid, seed, replicate, noise, integrator, block) -> ModePaths:
    phi, load, dim = step_dynamics(spec, K_max, grid.h, integrator)
    u0, v0 = spec.initial_state(K_max)
    U = np.empty((K_max, grid.n_steps + 1))
    V = np.empty((K_max, grid.n_steps + 1))
    U[:, 0], V[:, 0] = u0, v0

    def store(Ub, Vb, start):
        U[:, start + 1 : start + 1 + Ub.shape[1]] = Ub
        V[:, start + 1 : start + 1 + Vb.shape[1]] = Vb

    streams = mode_streams(seed, K_max, (replicate,)) if noise else None
    advance_paths(phi, load, u0, v0, grid.n_steps, streams, dim, store, block)
    return ModePaths(
        grid=grid,
        u=U,
        v=V,
        seed=seed,
        replicate=replicate,
        integrator=integrator,
        provenance={"backend": _backend.BACKEND, "noise": noise, "rng": "Philox/SeedSequence"},
    )


def simulate_exact(
    spec: ModelSpec,
    K_max: int,
    grid: TimeGrid,
    seed: int,
    *,
    replicate: int = 0,
    noise: bool = True,
    block: int = DEFAULT_BLOCK,
) -> ModePaths:
    """Sample mode paths from the exact Gaussian transition law."""
    return _simulate(spec, K_max, grid, seed, replicate, noise, "exact", block)


def simulate_euler(
    spec: ModelSpec,
    K_max: int,
    grid: TimeGrid,
    seed: int,
    *,
    replicate: int = 0,
    noise: bool = True,
    block: int = DEFAULT_BLOCK,
) -> ModePaths:
    """Sample mode paths with the semi-implicit Euler-Maruyama scheme."""
    return _simulate(spec, K_max, grid, seed, replicate, noise, "euler", block)


# ---------------------------------------------------------------------------
# Trajectory dumps

_MAGIC = b"HSPDPATH"
_HEADER = struct.Struct("<8sqqqd")


def write_paths_binary(paths: ModePaths, path: str | Path) -> Path:
    """Little-endian float64 column file.

    Header: magic, K_max, n_steps, seed (-1 if unknown), T.  Body: ``u`` then
    ``v`` in mode-major order.
    """
    path = Path(path)
    seed = -1 if paths.seed is None else int(paths.seed)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, paths.K_max, paths.grid.n_steps, seed, paths.grid.T))
        fh.write(np.ascontiguousarray(paths.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(paths.v, dtype="<f8").tobytes())
    return path


def read_paths_binary(path: str | Path) -> ModePaths:
    with open(path, "rb") as fh:
        magic, K, n, seed, T = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a trajectory dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    size = K * (n + 1)
    if data.size != 2 * size:
        raise ValueError(f"{path}: truncated trajectory dump")
    return ModePaths(
        grid=TimeGrid(T, n),
        u=data[:size].reshape(K, n + 1).copy(),
        v=data[size:].reshape(K, n + 1).copy(),
        seed=None if seed < 0 else seed,
    )


def write_paths_csv(paths: ModePaths, path: str | Path) -> Path:
    """One row per time point: ``t, u_1..u_K, v_1..v_K``."""
    path = Path(path)
    K = paths.K_max
    header = ["t"] + [f"u_{k}" for k in range(1, K + 1)] + [f"v_{k}" for k in range(1, K + 1)]
    table = np.column_stack([paths.grid.times, paths.u.T, paths.v.T])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path
