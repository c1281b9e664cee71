"""Monte-Carlo studies, rate fitting and reports.

A study runs ``R`` independent replicates for every resolution ``delta`` in a
decreasing list, each with ``N`` equispaced locations and a time grid with
``h <= c_h delta^2``.  Replicate ``r`` of cell ``i`` draws its noise from
streams keyed by ``(seed, (i, r, k))``, so results do not depend on the
number of worker threads or on scheduling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .estimator import EstimationError, asymptotic_sigma
from .kernels import KernelProfile, min_modes
from .measurements import DEFAULT_MARGIN, make_placement
from .model import ModelSpec, model_from_mapping, preset
from .spectral import INTEGRATORS, TimeGrid
from .stream import ReplicateDesign, _Pipeline, estimate_replicate

__all__ = [
    "StudyConfig",
    "CellResult",
    "StudyResult",
    "StudyAbort",
    "run_mc_study",
    "fit_rate",
    "theoretical_slopes",
    "emit_report",
    "study_config_from_mapping",
]

MAX_FAIL_FRACTION = 0.05
DEFAULT_C_H = 0.0125
DEFAULT_SUPPORT_TOL = 1e-10


class StudyAbort(RuntimeError):
    """Too many replicates failed in one cell."""


@dataclass(frozen=True)
class StudyConfig:
    """Design of a Monte-Carlo study.

    ``N`` is either a fixed count (``N_fixed``) or ``ceil(N_factor / delta)``.
    The time step is ``h <= c_h delta^2`` unless ``n_steps`` fixes the grid.
    ``K_factor`` scales the default mode count ``8 ceil(L / delta)``.
    """

    spec: ModelSpec
    deltas: tuple[float, ...]
    replicates: int = 100
    N_factor: float = 0.5
    N_fixed: int | None = None
    c_h: float = DEFAULT_C_H
    n_steps: int | None = None
    K_factor: float = 1.0
    integrator: str = "exact"
    drift_rule: str = "hermite"
    seed: int = 0
    margin: float = DEFAULT_MARGIN
    support_tol: float | None = DEFAULT_SUPPORT_TOL
    threads: int = 1

    def __post_init__(self) -> None:
        ds = tuple(float(d) for d in self.deltas)
        object.__setattr__(self, "deltas", ds)
        if len(ds) == 0:
            raise ValueError("delta list is empty")
        if any(b >= a for a, b in zip(ds, ds[1:])):
            raise ValueError("delta list must be strictly decreasing")
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not self.c_h > 0:
            raise ValueError("c_h must be positive")
        for d in ds:
            # surfaces packing errors before any simulation
            self.placement(d)

    def N_for(self, delta: float) -> int:
        if self.N_fixed is not None:
            return int(self.N_fixed)
        return int(math.ceil(self.N_factor / delta - 1e-9))

    def placement(self, delta: float):
        return make_placement(
            self.N_for(delta),
            delta,
            self.spec.domain_length,
            self.margin * self.spec.domain_length,
            support_tol=self.support_tol,
        )

    def design(self, delta: float) -> ReplicateDesign:
        pl = self.placement(delta)
        K = int(math.ceil(self.K_factor * min_modes(delta, self.spec.domain_length)))
        if self.n_steps is not None:
            grid = TimeGrid(self.spec.horizon, self.n_steps)
            return ReplicateDesign(self.spec, pl, grid, K, self.integrator, self.drift_rule)
        return ReplicateDesign.from_step_rule(
            self.spec, pl, self.c_h, K_max=K, integrator=self.integrator, drift_rule=self.drift_rule
        )


@dataclass
class CellResult:
    """Replicate records for one resolution ``delta``."""

    delta: float
    N: int
    h: float
    n_steps: int
    K_max: int
    estimates: np.ndarray
    standardized: np.ndarray
    rho_I_rho: np.ndarray
    conditions: np.ndarray
    replicate_ids: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def R(self) -> int:
        return int(self.estimates.shape[0])

    def errors(self, truth: np.ndarray) -> np.ndarray:
        return self.estimates - truth

    def rmse(self, truth: np.ndarray) -> np.ndarray:
        return np.sqrt(np.mean(self.errors(truth) ** 2, axis=0))

    def bias(self, truth: np.ndarray) -> np.ndarray:
        return np.mean(self.errors(truth), axis=0)

    @property
    def std_mean(self) -> np.ndarray:
        return np.mean(self.standardized, axis=0)

    @property
    def std_var(self) -> np.ndarray:
        return np.var(self.standardized, axis=0, ddof=1)

    @property
    def mean_rho_I_rho(self) -> np.ndarray:
        return np.mean(self.rho_I_rho, axis=0)


@dataclass
class StudyResult:
    config: StudyConfig
    cells: list[CellResult]
    sigma: np.ndarray
    clt_cov: np.ndarray

    @property
    def truth(self) -> np.ndarray:
        return self.config.spec.params

    @property
    def names(self) -> list[str]:
        spec = self.config.spec
        return [f"theta{i + 1}" for i in range(spec.p)] + [f"eta{j + 1}" for j in range(spec.q)]

    @property
    def deltas(self) -> np.ndarray:
        return np.array([c.delta for c in self.cells])

    def rmse_table(self) -> np.ndarray:
        return np.array([c.rmse(self.truth) for c in self.cells])

    def slopes(self) -> np.ndarray:
        """Fitted log-log slope per parameter (NaN with fewer than 2 cells)."""
        rm = self.rmse_table()
        if len(self.cells) < 2:
            return np.full(rm.shape[1], np.nan)
        return np.array([fit_rate(self.deltas, rm[:, j])[0] for j in range(rm.shape[1])])


def fit_rate(deltas: Sequence[float], rmses: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``log rmse = slope log delta + intercept``.

    Returns ``(slope, intercept, residual)`` with the residual the root mean
    square deviation in log space.
    """
    x = np.asarray(deltas, dtype=float)
    y = np.asarray(rmses, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need matching arrays with at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("deltas and rmses must be positive and finite")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - ly) ** 2)))
    return float(slope), float(intercept), resid


def theoretical_slopes(spec: ModelSpec, N_fixed: int | None = None) -> np.ndarray:
    """RMSE exponents from the rate matrix; ``N ~ 1/delta`` adds one half."""
    a1, b1 = spec.alpha1, spec.beta1
    expo = np.concatenate([2 * spec.alphas - a1 - b1, 2 * spec.betas - b1])
    return expo + (0.0 if N_fixed is not None else 0.5)


def _run_cell(config: StudyConfig, index: int, profile: KernelProfile) -> CellResult:
    delta = config.deltas[index]
    design = config.design(delta)
    pipe = _Pipeline(design, profile)
    truth = config.spec.params

    def one(r: int):
        try:
            rep = estimate_replicate(
                design, profile, config.seed, (index, r), truth=truth, with_theory=False, _pipeline=pipe
            )
        except (EstimationError, FloatingPointError, np.linalg.LinAlgError) as exc:
            return r, None, f"{type(exc).__name__}: {exc}"
        return r, rep, None

    R = config.replicates
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(one, range(R)))
    else:
        outcomes = [one(r) for r in range(R)]
    ok = [(r, rep) for r, rep, err in outcomes if rep is not None]
    failures = [(r, err) for r, rep, err in outcomes if rep is None]
    if len(failures) > MAX_FAIL_FRACTION * R:
        raise StudyAbort(
            f"{len(failures)} of {R} replicates failed at delta={delta}; first: {failures[0][1]}"
        )
    d = truth.size
    if not ok:
        empty = np.zeros((0, d))
        return CellResult(delta, design.placement.N, design.grid.h, design.grid.n_steps, design.K_max,
                          empty, empty, np.zeros((0, d, d)), np.zeros(0), np.zeros(0, int), failures)
    return CellResult(
        delta=delta,
        N=design.placement.N,
        h=design.grid.h,
        n_steps=design.grid.n_steps,
        K_max=design.K_max,
        estimates=np.array([rep.estimate for _, rep in ok]),
        standardized=np.array([rep.standardized for _, rep in ok]),
        rho_I_rho=np.array([rep.rho_I_rho for _, rep in ok]),
        conditions=np.array([rep.condition for _, rep in ok]),
        replicate_ids=np.array([r for r, _ in ok]),
        failures=failures,
    )


def run_mc_study(config: StudyConfig, profile: KernelProfile | None = None) -> StudyResult:
    """Run every cell of the study.

    Raises
    ------
    StudyAbort
        If more than 5% of the replicates in a cell fail to estimate.
    """
    profile = profile or KernelProfile()
    sig = asymptotic_sigma(config.spec, profile)
    cells = [_run_cell(config, i, profile) for i in range(len(config.deltas))]
    return StudyResult(config=config, cells=cells, sigma=sig.sigma, clt_cov=sig.clt_cov)


def study_config_from_mapping(data: Mapping[str, Any], **overrides: Any) -> StudyConfig:
    """Build a config from a parsed TOML document.

    The model comes from :func:`model_from_mapping`; the ``[study]`` table
    supplies ``deltas``, ``replicates``, ``N_factor`` or ``N``, ``c_h``,
    ``n_steps``, ``K_factor``, ``integrator``, ``drift_rule``, ``seed``,
    ``margin``, ``support_tol`` and ``threads``.
    """
    spec = model_from_mapping(data) if data else preset("plate_structural")
    st = dict(data.get("study", {})) if data else {}
    if "N" in st:
        st["N_fixed"] = st.pop("N")
    if "deltas" in st:
        st["deltas"] = tuple(st["deltas"])
    st.setdefault("deltas", (0.1, 0.07, 0.05, 0.035))
    allowed = {f for f in StudyConfig.__dataclass_fields__ if f != "spec"}
    unknown = set(st) - allowed
    if unknown:
        raise ValueError(f"unknown [study] keys: {sorted(unknown)}")
    st.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig(spec=spec, **st)


# ---------------------------------------------------------------- reports


def _g(x: float) -> str:
    return f"{x:.12g}"


def _cells_csv(res: StudyResult) -> str:
    names = res.names
    head = ["delta", "N", "h", "n_steps", "K_max", "replicates", "failures"]
    for n in names:
        head += [f"{n}_rmse", f"{n}_bias", f"{n}_std_mean", f"{n}_std_var", f"{n}_clt_var"]
    lines = [",".join(head)]
    truth = res.truth
    clt = np.diag(res.clt_cov)
    for c in res.cells:
        row = [_g(c.delta), str(c.N), _g(c.h), str(c.n_steps), str(c.K_max), str(c.R), str(len(c.failures))]
        if c.R:
            rm, bi, sm, sv = c.rmse(truth), c.bias(truth), c.std_mean, c.std_var
        else:
            rm = bi = sm = sv = np.full(len(names), np.nan)
        for j in range(len(names)):
            row += [_g(rm[j]), _g(bi[j]), _g(sm[j]), _g(sv[j]), _g(clt[j])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _replicates_csv(res: StudyResult) -> str:
    names = res.names
    head = ["delta", "replicate"] + [f"{n}_hat" for n in names] + [f"{n}_std" for n in names] + ["condition"]
    lines = [",".join(head)]
    for c in res.cells:
        for i in range(c.R):
            row = [_g(c.delta), str(int(c.replicate_ids[i]))]
            row += [_g(x) for x in c.estimates[i]] + [_g(x) for x in c.standardized[i]] + [_g(c.conditions[i])]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _summary_txt(res: StudyResult) -> str:
    cfg = res.config
    spec = cfg.spec
    names = res.names
    out = [
        f"model = {spec.name or 'custom'}",
        f"elastic_terms = {list(spec.elastic_terms)}",
        f"damping_terms = {list(spec.damping_terms)}",
        f"T = {_g(spec.horizon)}",
        f"L = {_g(spec.domain_length)}",
        f"deltas = {[_g(d) for d in cfg.deltas]}",
        f"replicates = {cfg.replicates}",
        f"integrator = {cfg.integrator}",
        f"drift_rule = {cfg.drift_rule}",
        f"seed = {cfg.seed}",
    ]
    theory = theoretical_slopes(spec, cfg.N_fixed)
    slopes = res.slopes()
    for j, n in enumerate(names):
        out.append(f"{n}: fitted slope = {_g(slopes[j])}, theoretical slope = {_g(theory[j])}")
    for j, n in enumerate(names):
        out.append(f"{n}: clt variance = {_g(res.clt_cov[j, j])}")
    for c in res.cells:
        out.append(
            f"delta = {_g(c.delta)}: N = {c.N}, n_steps = {c.n_steps}, K_max = {c.K_max}, "
            f"ok = {c.R}, failed = {len(c.failures)}"
        )
        for r, err in c.failures:
            out.append(f"  replicate {r} failed: {err}")
    return "\n".join(out) + "\n"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg(res: StudyResult) -> str:
    """Log-log RMSE plot with one reference line per parameter."""
    W, H, ml, mr, mt, mb = 640, 440, 70, 150, 30, 50
    x = np.log10(res.deltas)
    rm = res.rmse_table()
    good = np.isfinite(rm) & (rm > 0)
    y = np.where(good, np.log10(np.where(good, rm, 1.0)), np.nan)
    x0, x1 = float(x.min()), float(x.max())
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (x1 - x0)
    x0, x1 = x0 - pad, x1 + pad
    theory = theoretical_slopes(res.config.spec, res.config.N_fixed)
    xm = float(np.mean(x))
    refs = []
    for j in range(rm.shape[1]):
        yj = y[:, j]
        ym = float(np.nanmean(yj)) if np.any(np.isfinite(yj)) else 0.0
        refs.append((ym, theory[j]))
    ys = [v for v in y.ravel() if np.isfinite(v)]
    for ym, s in refs:
        ys += [ym + s * (x0 - xm), ym + s * (x1 - xm)]
    y0, y1 = min(ys), max(ys)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ypad = 0.05 * (y1 - y0)
    y0, y1 = y0 - ypad, y1 + ypad

    def px(v):
        return ml + (v - x0) / (x1 - x0) * (W - ml - mr)

    def py(v):
        return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb)

    f = lambda v: f"{v:.2f}"  # noqa: E731
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{W - ml - mr}" height="{H - mt - mb}" fill="none" stroke="black"/>',
        f'<text x="{(W - mr + ml) / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="13">log10 delta</text>',
        f'<text x="15" y="{(H - mb + mt) / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 15 {(H - mb + mt) / 2:.1f})">log10 RMSE</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{f(px(v))}" y="{H - mb + 16}" text-anchor="middle" font-size="11">{v:.2f}</text>')
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{ml - 6}" y="{f(py(v) + 4)}" text-anchor="end" font-size="11">{v:.2f}</text>')
    for j, name in enumerate(res.names):
        col = _COLORS[j % len(_COLORS)]
        ym, s = refs[j]
        parts.append(
            f'<line class="reference" data-param="{name}" data-slope="{_g(s)}" '
            f'x1="{f(px(x0))}" y1="{f(py(ym + s * (x0 - xm)))}" x2="{f(px(x1))}" y2="{f(py(ym + s * (x1 - xm)))}" '
            f'stroke="black" stroke-dasharray="5,4"/>'
        )
        pts = [(px(a), py(b)) for a, b in zip(x, y[:, j]) if np.isfinite(b)]
        if pts:
            parts.append(
                f'<polyline class="rmse" data-param="{name}" fill="none" stroke="{col}" stroke-width="1.5" points="'
                + " ".join(f"{f(a)},{f(b)}" for a, b in pts)
                + '"/>'
            )
            for a, b in pts:
                parts.append(f'<circle cx="{f(a)}" cy="{f(b)}" r="3.5" fill="{col}"/>')
        ly = mt + 20 + 36 * j
        parts.append(f'<circle cx="{W - mr + 16}" cy="{ly}" r="4" fill="{col}"/>')
        parts.append(f'<text x="{W - mr + 26}" y="{ly + 4}" font-size="12">{name} RMSE</text>')
        parts.append(f'<text x="{W - mr + 26}" y="{ly + 19}" font-size="11">reference slope {_g(s)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(res: StudyResult, out_dir: str | Path, stem: str = "study") -> dict[str, Path]:
    """Write ``<stem>_cells.csv``, ``<stem>_replicates.csv``, ``<stem>_summary.txt`` and ``<stem>_rmse.svg``."""
    if not res.cells:
        raise ValueError("study has no cells to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    files = {
        "cells": (out / f"{stem}_cells.csv", _cells_csv(res)),
        "replicates": (out / f"{stem}_replicates.csv", _replicates_csv(res)),
        "summary": (out / f"{stem}_summary.txt", _summary_txt(res)),
        "svg": (out / f"{stem}_rmse.svg", _svg(res)),
    }
    written = {}
    for key, (path, text) in files.items():
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written[key] = path
    return written
