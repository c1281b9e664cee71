"""Streaming simulate, measure and accumulate for one replicate.

Mode paths are never stored: every block of states is mapped to
measurements and folded into the estimator sums right away.  Memory is
``O(K_max * block)`` whatever the number of time steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import EstimateReport, StatsAccumulator, _report_from_totals
from .kernels import KernelProfile, min_modes
from .measurements import MeasurementOperator, Placement
from .model import ModelSpec
from .spectral import DEFAULT_BLOCK, TimeGrid, advance_paths, mode_streams, step_dynamics

__all__ = ["ReplicateDesign", "estimate_replicate"]


@dataclass(frozen=True)
class ReplicateDesign:
    """Everything that fixes the law of one replicate's estimate."""

    spec: ModelSpec
    placement: Placement
    grid: TimeGrid
    K_max: int
    integrator: str = "exact"
    drift_rule: str = "hermite"

    @classmethod
    def from_step_rule(
        cls,
        spec: ModelSpec,
        placement: Placement,
        c_h: float,
        *,
        K_max: int | None = None,
        integrator: str = "exact",
        drift_rule: str = "hermite",
    ) -> "ReplicateDesign":
        """Grid with ``h <= c_h delta^2`` dividing the horizon evenly."""
        d = placement.delta
        n = int(np.ceil(spec.horizon / (c_h * d * d) - 1e-9))
        K = min_modes(d, spec.domain_length) if K_max is None else K_max
        return cls(spec, placement, TimeGrid(spec.horizon, n), K, integrator, drift_rule)


class _Pipeline:
    def __init__(self, design: ReplicateDesign, profile: KernelProfile) -> None:
        self.design = design
        self.op = MeasurementOperator(design.spec, design.placement, profile, design.K_max)
        self.phi, self.load, self.dim = step_dynamics(design.spec, design.K_max, design.grid.h, design.integrator)
        self.u0, self.v0 = design.spec.initial_state(design.K_max)


def estimate_replicate(
    design: ReplicateDesign,
    profile: KernelProfile,
    seed: int,
    key: tuple[int, ...],
    *,
    truth=None,
    with_theory: bool = True,
    block: int = DEFAULT_BLOCK,
    _pipeline: _Pipeline | None = None,
) -> EstimateReport:
    """Simulate one replicate and return its estimate.

    The noise stream of mode ``k`` is keyed by ``(seed, key + (k,))``, so a
    replicate is reproducible on its own and independent of thread layout.
    """
    pipe = _pipeline or _Pipeline(design, profile)
    spec, pl = design.spec, design.placement
    acc = StatsAccumulator(spec.p, spec.q, pl.N, design.grid.h)
    prev = pipe.op.apply(pipe.u0[:, None], pipe.v0[:, None])

    def on_block(U, V, start):
        nonlocal prev
        cur = pipe.op.apply(U, V)
        joined = {k: np.concatenate([prev[k], cur[k]], axis=-1) for k in cur}
        acc.add(joined["u_alpha"], joined["v_alpha"], joined["u_beta"], joined["v_beta"], joined["v"])
        prev = {k: a[..., -1:] for k, a in cur.items()}

    streams = mode_streams(seed, design.K_max, tuple(key))
    advance_paths(pipe.phi, pipe.load, pipe.u0, pipe.v0, design.grid.n_steps, streams, pipe.dim, on_block, block)
    order = sorted(range(pl.N), key=lambda i: (pl.locations[i], i))
    rep = _report_from_totals(
        acc.totals(order),
        p=spec.p,
        q=spec.q,
        delta=pl.delta,
        N=pl.N,
        h=design.grid.h,
        n_steps=acc.n_steps,
        norm_K=profile.norm,
        drift_rule=design.drift_rule,
        spec=spec,
        profile=profile if with_theory else None,
        truth=truth,
    )
    rep.meta.update(seed=seed, key=tuple(key), integrator=design.integrator, K_max=design.K_max)
    return rep
