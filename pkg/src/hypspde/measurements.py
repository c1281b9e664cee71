"""Local measurements of the simulated field.

For a location ``x`` the measurements are sine-basis sums

    u^{Delta_i}(t) = sum_k lam_k^{alpha_i} c_k u_k(t),
    v^{Delta_j}(t) = sum_k lam_k^{beta_j}  c_k v_k(t),
    v_{delta,x}(t) = sum_k c_k v_k(t),

with ``c_k`` the sine coefficients of ``K_{delta,x}``.  Besides the
observation vector ``Y = (u^{Delta_1..p}, v^{Delta_1..q})`` a measurement set
keeps the velocity ``v^{Delta_i}`` of each u-type component and the
displacement ``u^{Delta_j}`` of each v-type component; these are the time
derivative and antiderivative needed to integrate ``Y`` over a step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernels import KernelProfile, PlacementError, TruncationError, TRUNCATION_TOL, coefficient_matrix, min_modes
from .model import ModelSpec, eigenvalues
from .spectral import ModePaths

__all__ = [
    "Placement",
    "MeasurementSet",
    "MeasurementOperator",
    "make_placement",
    "extract_measurements",
    "write_measurements_csv",
]

DEFAULT_MARGIN = 0.1


@dataclass(frozen=True)
class Placement:
    """Equispaced locations ``x_1 < ... < x_N`` in ``[margin, L - margin]``.

    ``radius`` is the kernel support radius (in profile units) used for the
    disjointness and containment checks: 1 for the nominal support, smaller
    for an effective support at a tail tolerance.
    """

    delta: float
    locations: tuple[float, ...]
    domain_length: float = 1.0
    margin: float = DEFAULT_MARGIN
    radius: float = 1.0

    @property
    def N(self) -> int:
        return len(self.locations)

    @property
    def spacing(self) -> float:
        if self.N < 2:
            return math.inf
        return float(np.min(np.diff(self.locations)))


def make_placement(
    N: int,
    delta: float,
    L: float = 1.0,
    margin: float | None = None,
    *,
    profile: KernelProfile | None = None,
    support_tol: float | None = None,
) -> Placement:
    """Place ``N`` locations equispaced in ``[margin, L - margin]``.

    A single location is centred.  Supports ``[x - r delta, x + r delta]``
    must be pairwise disjoint and inside the domain, where ``r = 1`` by default
    or the effective radius of ``profile`` at ``support_tol``.

    Raises
    ------
    PlacementError
        When the locations cannot be packed; the message quotes the largest
        feasible ``N``.
    """
    margin = DEFAULT_MARGIN * L if margin is None else float(margin)
    if N < 1:
        raise PlacementError("N must be >= 1")
    if not (0 <= margin < L / 2):
        raise PlacementError("margin must lie in [0, L/2)")
    radius = (profile or KernelProfile()).effective_radius(support_tol) if support_tol else 1.0
    width = L - 2 * margin
    reach = radius * delta
    if N == 1:
        xs = np.array([L / 2])
        if not (reach < L / 2):
            raise PlacementError(f"delta={delta} too large for a single centred location")
    else:
        spacing = width / (N - 1)
        if spacing < 2 * reach * (1 - 1e-12):
            n_max = int(math.floor(width / (2 * reach) + 1e-12)) + 1
            raise PlacementError(
                f"cannot place N={N} disjoint supports of radius {reach:.4g} in [{margin:g}, {L - margin:g}]; "
                f"max feasible N = {n_max}"
            )
        if margin < reach * (1 - 1e-12):
            raise PlacementError(
                f"margin {margin:g} is smaller than the support radius {reach:.4g}; supports would leave (0, L)"
            )
        xs = margin + spacing * np.arange(N)
    return Placement(
        delta=float(delta),
        locations=tuple(float(x) for x in xs),
        domain_length=L,
        margin=margin,
        radius=radius,
    )


@dataclass
class MeasurementSet:
    """Measurement paths at one location on the simulation grid.

    Arrays have the time index last: ``u_alpha[i, n] = u^{Delta_i}(t_n)``.
    """

    x: float
    delta: float
    times: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    u_alpha: np.ndarray
    v_alpha: np.ndarray
    u_beta: np.ndarray
    v_beta: np.ndarray
    v: np.ndarray
    norm_K: float

    def __post_init__(self) -> None:
        n = self.times.shape[0]
        for name in ("u_alpha", "v_alpha", "u_beta", "v_beta"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != n:
                raise ValueError(f"{name} must have shape (components, {n})")
        if self.v.shape != (n,):
            raise ValueError("v must have one value per grid point")
        if self.u_alpha.shape[0] != self.alphas.size or self.v_beta.shape[0] != self.betas.size:
            raise ValueError("component counts do not match the exponent lists")
        for name in ("u_alpha", "v_alpha", "u_beta", "v_beta", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite values in {name}")

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def Y(self) -> np.ndarray:
        """Observation vector paths, shape ``(p + q, n_steps + 1)``."""
        return np.vstack([self.u_alpha, self.v_beta])


class MeasurementOperator:
    """Linear map from mode states to measurements at a set of locations.

    Built once per ``(spec, placement, profile, K_max)``; applying it to a
    block of mode states is two matrix products.
    """

    def __init__(
        self,
        spec: ModelSpec,
        placement: Placement,
        profile: KernelProfile,
        K_max: int,
        *,
        check_truncation: bool = True,
    ) -> None:
        L = placement.domain_length
        if abs(L - spec.domain_length) > 1e-12:
            raise ValueError("placement and model use different domain lengths")
        self.spec = spec
        self.placement = placement
        self.profile = profile
        self.K_max = int(K_max)
        self.p, self.q = spec.p, spec.q
        self.N = placement.N
        C = coefficient_matrix(profile, placement.delta, placement.locations, self.K_max, L)
        self.coeffs = C
        deficit = 1.0 - np.sum(C**2, axis=1) / profile.norm_sq
        self.rel_deficit = float(np.max(deficit))
        if check_truncation and self.rel_deficit > TRUNCATION_TOL:
            raise TruncationError(
                f"K_max={K_max} misses {self.rel_deficit:.2e} of ||K||^2; use K_max >= {min_modes(placement.delta, L)}"
            )
        lam = eigenvalues(np.arange(1, self.K_max + 1), L)
        wa = np.stack([lam**a for a in spec.alphas]) if self.p else np.zeros((0, self.K_max))
        wb = np.stack([lam**b for b in spec.betas]) if self.q else np.zeros((0, self.K_max))
        # rows: location-major within each component block
        Ca = (wa[:, None, :] * C[None, :, :]).reshape(-1, self.K_max)
        Cb = (wb[:, None, :] * C[None, :, :]).reshape(-1, self.K_max)
        self._on_u = np.ascontiguousarray(np.vstack([Ca, Cb]))
        self._on_v = np.ascontiguousarray(np.vstack([Ca, Cb, C]))

    def apply(self, U: np.ndarray, V: np.ndarray) -> dict[str, np.ndarray]:
        """Measurements of mode states ``U, V`` of shape ``(K_max, n)``.

        Returns arrays ``u_alpha, v_alpha`` of shape ``(p, N, n)``,
        ``u_beta, v_beta`` of shape ``(q, N, n)`` and ``v`` of shape ``(N, n)``.
        """
        if U.shape[0] != self.K_max or V.shape != U.shape:
            raise ValueError(f"mode arrays must have {self.K_max} rows")
        n = U.shape[1]
        p, q, N = self.p, self.q, self.N
        mu = self._on_u @ U
        mv = self._on_v @ V
        return {
            "u_alpha": mu[: p * N].reshape(p, N, n),
            "u_beta": mu[p * N :].reshape(q, N, n),
            "v_alpha": mv[: p * N].reshape(p, N, n),
            "v_beta": mv[p * N : (p + q) * N].reshape(q, N, n),
            "v": mv[(p + q) * N :],
        }

    def split(self, parts: dict[str, np.ndarray], times: np.ndarray) -> list[MeasurementSet]:
        out = []
        for l, x in enumerate(self.placement.locations):
            out.append(
                MeasurementSet(
                    x=x,
                    delta=self.placement.delta,
                    times=times,
                    alphas=self.spec.alphas,
                    betas=self.spec.betas,
                    u_alpha=parts["u_alpha"][:, l, :],
                    v_alpha=parts["v_alpha"][:, l, :],
                    u_beta=parts["u_beta"][:, l, :],
                    v_beta=parts["v_beta"][:, l, :],
                    v=parts["v"][l],
                    norm_K=self.profile.norm,
                )
            )
        return out


def extract_measurements(
    paths: ModePaths,
    placement: Placement,
    profile: KernelProfile,
    spec: ModelSpec,
    *,
    check_truncation: bool = True,
) -> list[MeasurementSet]:
    """Measurement sets at every location of ``placement``."""
    op = MeasurementOperator(spec, placement, profile, paths.K_max, check_truncation=check_truncation)
    return op.split(op.apply(paths.u, paths.v), paths.grid.times)


def write_measurements_csv(measurements: Sequence[MeasurementSet], out_dir: str | Path, stem: str = "loc") -> list[Path]:
    """One CSV per location: ``t``, the components of ``Y`` and ``v``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(measurements):
        cols = ["t"] + [f"u_alpha{j + 1}" for j in range(m.alphas.size)] + [f"v_beta{j + 1}" for j in range(m.betas.size)] + ["v"]
        table = np.column_stack([m.times, m.Y.T, m.v])
        path = out_dir / f"{stem}_{i:03d}.csv"
        np.savetxt(path, table, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
        files.append(path)
    return files
