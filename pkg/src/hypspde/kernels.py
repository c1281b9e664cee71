"""Point-spread kernels, their rescaled sine coefficients and Sobolev norms.

The base profile is the bump ``K(y) = exp(-5 / (1 - y^2))`` on ``|y| < 1``.
``laplacian_bump(r)`` is ``(d^2/dy^2)^r`` of the bump, which has ``r``
vanishing moments and so keeps negative-order Sobolev norms finite.

A kernel placed at ``x`` with resolution ``delta`` is
``K_{delta,x}(z) = delta^{-1/2} K((z - x) / delta)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from .model import eigenvalues

__all__ = [
    "KernelProfile",
    "SineCoeffs",
    "PlacementError",
    "TruncationError",
    "AssumptionViolation",
    "bump",
    "laplacian_bump",
    "rescale_coeffs",
    "coefficient_matrix",
    "fractional_apply",
    "sobolev_norm",
    "min_modes",
    "write_coeffs_csv",
]

BUMP_SCALE = 5.0
MIN_NODES = 64
TRUNCATION_TOL = 1e-4


class PlacementError(ValueError):
    """Kernel support leaves the domain or overlaps another location."""


class TruncationError(ValueError):
    """Too few sine modes to resolve the rescaled kernel."""


class AssumptionViolation(ValueError):
    """A requested norm is infinite for the given kernel."""


@functools.lru_cache(maxsize=None)
def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


@functools.lru_cache(maxsize=None)
def _derivative_form(order: int) -> tuple[Polynomial, int]:
    """``(d/dy)^order`` of the bump as ``P(y) (1 - y^2)^{-m} exp(g(y))``.

    With ``g = -5 / (1 - y^2)`` one step maps ``(P, m)`` to
    ``(P' (1-y^2)^2 + 2 m y P (1-y^2) - 10 y P, m + 2)``.
    """
    P, m = Polynomial([1.0]), 0
    one_minus = Polynomial([1.0, 0.0, -1.0])
    y = Polynomial([0.0, 1.0])
    for _ in range(order):
        P = P.deriv() * one_minus**2 + 2 * m * y * P * one_minus - 2 * BUMP_SCALE * y * P
        m += 2
    return P, m


@dataclass(frozen=True)
class KernelProfile:
    """Compactly supported profile on ``[-1, 1]``.

    Parameters
    ----------
    kind
        ``"bump"`` or ``"laplacian_bump"``.
    order
        Number of second derivatives applied to the bump (``laplacian_bump``).
    """

    kind: str = "bump"
    order: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("bump", "laplacian_bump"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "bump" and self.order != 0:
            raise ValueError("the plain bump has order 0")
        if self.kind == "laplacian_bump" and self.order < 1:
            raise ValueError("laplacian_bump needs order >= 1")

    @property
    def support_radius(self) -> float:
        return 1.0

    @property
    def mean_zero(self) -> bool:
        return self.order > 0

    def derivative(self, y, nu: int = 0) -> np.ndarray:
        """``(d/dy)^nu K(y)``, evaluated analytically."""
        y = np.asarray(y, dtype=float)
        P, m = _derivative_form(2 * self.order + nu)
        out = np.zeros_like(y)
        inside = np.abs(y) < 1
        yi = y[inside]
        w = 1.0 - yi * yi
        out[inside] = P(yi) * np.exp(-BUMP_SCALE / w - m * np.log(w))
        return out

    def __call__(self, y) -> np.ndarray:
        return self.derivative(y, 0)

    def _nodes(self, n: int = 256) -> tuple[np.ndarray, np.ndarray]:
        return _gauss(n)

    @functools.cached_property
    def norm_sq(self) -> float:
        """``||K||^2`` by Gauss-Legendre quadrature."""
        y, w = _gauss(max(MIN_NODES, 64 * (self.order + 1)))
        return float(np.sum(w * self(y) ** 2))

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    def fourier(self, xi) -> np.ndarray:
        """Cosine transform ``int K(y) cos(xi y) dy`` (the profile is even)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        n = max(MIN_NODES, 64 * (self.order + 1), int(8 * math.ceil(np.max(np.abs(xi)) / math.pi)) if xi.size else 0)
        y, w = _gauss(n)
        return np.cos(np.outer(xi, y)) @ (w * self(y))

    def base_fourier(self, xi) -> np.ndarray:
        """Cosine transform of the underlying bump."""
        return KernelProfile().fourier(xi)

    @functools.lru_cache(maxsize=32)
    def effective_radius(self, tol: float | None) -> float:
        """Smallest ``r`` with ``int_{|y|>r} K^2 <= tol ||K||^2``.

        ``tol=None`` returns the nominal radius 1.
        """
        if tol is None or tol <= 0:
            return 1.0
        from scipy.optimize import brentq

        total = self.norm_sq

        def tail(r):
            y, w = _gauss(MIN_NODES)
            z = r + (1 - r) * (y + 1) / 2
            return 2 * (1 - r) / 2 * float(np.sum(w * self(z) ** 2)) - tol * total

        if tail(0.0) <= 0:
            return 0.0
        return float(brentq(tail, 0.0, 1.0 - 1e-12, xtol=1e-10))


def bump() -> KernelProfile:
    return KernelProfile("bump", 0)


def laplacian_bump(order: int) -> KernelProfile:
    return KernelProfile("laplacian_bump", int(order))


@dataclass(frozen=True)
class SineCoeffs:
    """Sine coefficients ``c_k = <e_k, K_{delta,x}>`` for ``k = 1..K_max``.

    ``deficit`` is ``||K||^2 - sum c_k^2`` (truncation loss, relative to
    ``||K||^2`` in ``rel_deficit``).  ``gamma`` records the fractional power
    already applied.
    """

    delta: float
    x: float
    c: np.ndarray
    norm_K: float
    domain_length: float = 1.0
    gamma: float = 0.0

    @property
    def K_max(self) -> int:
        return self.c.shape[0]

    @property
    def deficit(self) -> float:
        return self.norm_K**2 - float(np.sum(self.c**2))

    @property
    def rel_deficit(self) -> float:
        return self.deficit / self.norm_K**2


def min_modes(delta: float, domain_length: float = 1.0) -> int:
    """Mode truncation rule ``K_max = 8 ceil(L / delta)``."""
    return 8 * math.ceil(domain_length / delta - 1e-12)


def _check_support(delta, x, L, radius):
    if not delta > 0:
        raise PlacementError("delta must be positive")
    lo, hi = x - radius * delta, x + radius * delta
    if lo < 0 or hi > L or (radius >= 1 and (lo <= 0 or hi >= L)):
        raise PlacementError(
            f"kernel support [{lo:.6g}, {hi:.6g}] is not inside (0, {L:g}); move x or shrink delta"
        )


def coefficient_matrix(
    profile: KernelProfile, delta: float, xs, K_max: int, L: float = 1.0
) -> np.ndarray:
    """Sine coefficients for several locations, shape ``(len(xs), K_max)``.

    Gauss-Legendre over the support with ``max(64, 8 ceil(k delta / L))``
    nodes for mode ``k``; modes sharing a node count are evaluated together.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ks = np.arange(1, K_max + 1)
    nodes = np.maximum(MIN_NODES, 8 * np.ceil(ks * delta / L).astype(int))
    out = np.empty((xs.size, K_max))
    scale = math.sqrt(2.0 / L) * math.sqrt(delta)
    for n in np.unique(nodes):
        sel = nodes == n
        y, w = _gauss(int(n))
        wk = w * profile(y)
        z = xs[:, None] + delta * y[None, :]
        arg = np.pi / L * ks[sel][None, :, None] * z[:, None, :]
        out[:, sel] = scale * (np.sin(arg) @ wk)
    return out


def rescale_coeffs(
    profile: KernelProfile,
    delta: float,
    x: float,
    K_max: int,
    L: float = 1.0,
    *,
    support_tol: float | None = None,
    check_truncation: bool = True,
) -> SineCoeffs:
    """Sine coefficients of ``K_{delta,x}`` on ``(0, L)``.

    Raises
    ------
    PlacementError
        If the support (nominal, or effective at ``support_tol``) leaves the
        domain.
    TruncationError
        If more than ``1e-4`` of ``||K||^2`` lies beyond mode ``K_max``.
    """
    _check_support(delta, x, L, profile.effective_radius(support_tol))
    c = coefficient_matrix(profile, delta, [x], K_max, L)[0]
    sc = SineCoeffs(delta=float(delta), x=float(x), c=c, norm_K=profile.norm, domain_length=L)
    if check_truncation and sc.rel_deficit > TRUNCATION_TOL:
        raise TruncationError(
            f"K_max={K_max} misses {sc.rel_deficit:.2e} of ||K||^2 at delta={delta}; "
            f"use K_max >= {min_modes(delta, L)}"
        )
    return sc


def fractional_apply(coeffs: SineCoeffs, gamma: float) -> SineCoeffs:
    """Coefficients of ``(-Delta)^gamma K_{delta,x}``: ``lambda_k^gamma c_k``."""
    if gamma == 0:
        return coeffs
    lam = eigenvalues(np.arange(1, coeffs.K_max + 1), coeffs.domain_length)
    return SineCoeffs(
        delta=coeffs.delta,
        x=coeffs.x,
        c=lam**gamma * coeffs.c,
        norm_K=coeffs.norm_K,
        domain_length=coeffs.domain_length,
        gamma=coeffs.gamma + gamma,
    )


def _xi_integral(f, power: float, xi_max: float, panels: int, order: int = 32) -> float:
    """``int_0^xi_max xi^power f(xi) dxi`` by composite Gauss rules.

    The first panel uses Gauss-Jacobi nodes so an integrable singularity
    ``xi^power`` with ``power > -1`` is handled exactly.
    """
    edges = np.linspace(0.0, xi_max, panels + 1)
    y, w = _gauss(order)
    total = 0.0
    a, b = edges[0], edges[1]
    xj, wj = roots_jacobi(order, 0.0, power)
    xi = a + (b - a) * (xj + 1) / 2
    total += float(np.sum(wj * f(xi))) * ((b - a) / 2) ** (power + 1)
    lo, hi = edges[1:-1], edges[2:]
    if lo.size:
        xi = (lo[:, None] + hi[:, None]) / 2 + (hi - lo)[:, None] / 2 * y[None, :]
        vals = xi**power * f(xi.reshape(-1)).reshape(xi.shape)
        total += float(np.sum(vals * w[None, :] * ((hi - lo) / 2)[:, None]))
    return total


@functools.lru_cache(maxsize=256)
def _sobolev_cached(kind: str, order: int, gamma: float, rtol: float) -> float:
    profile = KernelProfile(kind, order)
    power = 4 * gamma + 4 * order
    if power <= -1:
        raise AssumptionViolation(
            f"||(-Delta_0)^{gamma} K|| diverges for this kernel (needs 4 gamma + 4 r > -1 with r = {order} "
            "vanishing moments); use laplacian_bump with a higher order"
        )
    base = KernelProfile()

    # K^ = (-xi^2)^r base^, so |xi|^{4 gamma} |K^|^2 = xi^{4 gamma + 4 r} base^2
    def f(xi):
        return base.fourier(xi) ** 2

    xi_max, panels = 200.0, 32
    prev = _xi_integral(f, power, xi_max, panels) / math.pi
    for _ in range(8):
        xi_max, panels = 2 * xi_max, 2 * panels
        cur = _xi_integral(f, power, xi_max, panels) / math.pi
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur
    raise ArithmeticError(f"Sobolev norm did not converge (gamma={gamma}, order={order})")


def sobolev_norm(profile: KernelProfile, gamma: float, rtol: float = 1e-4) -> float:
    """Whole-space ``||(-Delta_0)^gamma K||^2 = (1/2pi) int |xi|^{4 gamma} |K^(xi)|^2``.

    The frequency grid is doubled (range and panel count) until the result
    changes by less than ``rtol``.

    Raises
    ------
    AssumptionViolation
        For negative ``gamma`` whose integral diverges at ``xi = 0``.
    """
    return _sobolev_cached(profile.kind, profile.order, float(gamma), float(rtol))


def write_coeffs_csv(coeffs: SineCoeffs, path: str | Path) -> Path:
    path = Path(path)
    lam = eigenvalues(np.arange(1, coeffs.K_max + 1), coeffs.domain_length)
    table = np.column_stack([np.arange(1, coeffs.K_max + 1), lam, coeffs.c])
    np.savetxt(path, table, delimiter=",", header="k,lambda,c", comments="", fmt=["%d", "%.17g", "%.17g"])
    return path
