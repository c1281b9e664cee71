"""Operator pair (A_theta, B_eta) of the damped second-order SPDE.

The model is

    dv = (A_theta u + B_eta v) dt + dW,    du = v dt

on the interval (0, L) with Dirichlet boundary conditions, where

    A_theta = sum_i theta_i (-Delta)^{alpha_i},   B_eta = sum_j eta_j (-Delta)^{beta_j}.

Coefficients are always stored with this sign convention ("canonical" signs).
The structurally damped plate ``dv = (-0.3 Delta^2 u + 0.3 Delta v) dt + dW``
therefore has ``theta_1 = -0.3`` (alpha_1 = 2) and ``eta_1 = -0.3`` (beta_1 = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

__all__ = [
    "ModelSpec",
    "ModeSymbol",
    "ValidationReport",
    "ParameterError",
    "PRESETS",
    "preset",
    "validate_parameters",
    "mode_symbols",
    "mode_symbol_arrays",
    "eigenvalues",
    "eigenfunction",
    "load_model_config",
    "model_from_mapping",
]

DEFAULT_K_SCAN = 10_000


class ParameterError(ValueError):
    """Raised for model specifications outside the supported regime."""


def _terms(raw: Sequence[Sequence[float]], name: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in raw:
        if len(item) != 2:
            raise ParameterError(f"{name} entries must be (exponent, coefficient) pairs, got {item!r}")
        expo, coef = float(item[0]), float(item[1])
        if not (math.isfinite(expo) and math.isfinite(coef)):
            raise ParameterError(f"{name} entries must be finite, got {item!r}")
        out.append((expo, coef))
    return tuple(out)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of the SPDE.

    Parameters
    ----------
    elastic_terms
        ``((alpha_1, theta_1), ..., (alpha_p, theta_p))`` with strictly
        decreasing exponents.
    damping_terms
        ``((beta_1, eta_1), ...)``, strictly decreasing exponents; may be empty.
    domain_length
        Length ``L`` of the interval ``(0, L)``.
    horizon
        Time horizon ``T``.
    initial_u, initial_v
        Sine coefficients of the initial displacement and velocity
        (zero-padded to the simulated truncation level).
    """

    elastic_terms: tuple[tuple[float, float], ...]
    damping_terms: tuple[tuple[float, float], ...] = ()
    domain_length: float = 1.0
    horizon: float = 1.0
    initial_u: tuple[float, ...] = ()
    initial_v: tuple[float, ...] = ()
    name: str = field(default="custom", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "elastic_terms", _terms(self.elastic_terms, "elastic_terms"))
        object.__setattr__(self, "damping_terms", _terms(self.damping_terms, "damping_terms"))
        object.__setattr__(self, "initial_u", tuple(float(c) for c in self.initial_u))
        object.__setattr__(self, "initial_v", tuple(float(c) for c in self.initial_v))
        if not self.domain_length > 0:
            raise ParameterError("domain_length must be positive")
        if not self.horizon > 0:
            raise ParameterError("horizon must be positive")
        for name, terms in (("elastic", self.elastic_terms), ("damping", self.damping_terms)):
            expos = [e for e, _ in terms]
            if any(e < 0 for e in expos):
                raise ParameterError(f"{name} exponents must be non-negative")
            if any(e1 <= e2 for e1, e2 in zip(expos, expos[1:])):
                raise ParameterError(f"{name} exponents must be strictly decreasing, got {expos}")

    @property
    def p(self) -> int:
        return len(self.elastic_terms)

    @property
    def q(self) -> int:
        return len(self.damping_terms)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([e for e, _ in self.elastic_terms], dtype=float)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([c for _, c in self.elastic_terms], dtype=float)

    @property
    def betas(self) -> np.ndarray:
        return np.array([e for e, _ in self.damping_terms], dtype=float)

    @property
    def etas(self) -> np.ndarray:
        return np.array([c for _, c in self.damping_terms], dtype=float)

    @property
    def alpha1(self) -> float:
        return self.elastic_terms[0][0] if self.elastic_terms else float("nan")

    @property
    def beta1(self) -> float:
        """Leading damping order; 0 when there is no damping."""
        return self.damping_terms[0][0] if self.damping_terms else 0.0

    @property
    def theta1(self) -> float:
        return self.elastic_terms[0][1]

    @property
    def eta1(self) -> float:
        return self.damping_terms[0][1] if self.damping_terms else 0.0

    @property
    def params(self) -> np.ndarray:
        """Stacked parameter vector ``(theta, eta)``."""
        return np.concatenate([self.thetas, self.etas])

    @property
    def exponents(self) -> np.ndarray:
        """Exponents of the observation vector components, ``(alpha, beta)``."""
        return np.concatenate([self.alphas, self.betas])

    @property
    def has_initial_condition(self) -> bool:
        return any(c != 0 for c in self.initial_u) or any(c != 0 for c in self.initial_v)

    def initial_state(self, k_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Zero-padded (or truncated) initial sine coefficients."""
        u0 = np.zeros(k_max)
        v0 = np.zeros(k_max)
        nu = min(k_max, len(self.initial_u))
        nv = min(k_max, len(self.initial_v))
        u0[:nu] = self.initial_u[:nu]
        v0[:nv] = self.initial_v[:nv]
        return u0, v0

    def replace(self, **changes: Any) -> "ModelSpec":
        data = dict(
            elastic_terms=self.elastic_terms,
            damping_terms=self.damping_terms,
            domain_length=self.domain_length,
            horizon=self.horizon,
            initial_u=self.initial_u,
            initial_v=self.initial_v,
            name=self.name,
        )
        data.update(changes)
        return ModelSpec(**data)


@dataclass(frozen=True)
class ModeSymbol:
    """Scalar symbols of mode ``k``.

    The mode ODE is ``du = v dt, dv = (a u + b v) dt + dW`` with
    ``a = sum theta_i lam^alpha_i``, ``b = sum eta_j lam^beta_j`` and
    ``ell = -a - b^2/4``.
    """

    lam: float
    a: float
    b: float
    ell: float

    @classmethod
    def from_ab(cls, a: float, b: float, lam: float = float("nan")) -> "ModeSymbol":
        return cls(lam=lam, a=float(a), b=float(b), ell=-float(a) - float(b) ** 2 / 4.0)


@dataclass
class ValidationReport:
    clauses: dict[str, bool]
    positivity_sufficient: bool
    c_lambda: float
    k_scan: int
    min_ell: float
    argmin_ell: int
    n_nonpositive: int

    @property
    def ok(self) -> bool:
        """All parameter clauses hold."""
        return all(self.clauses.values())

    @property
    def positive(self) -> bool:
        """``L_{theta,eta}`` has no non-positive eigenvalue up to ``k_scan``."""
        return self.n_nonpositive == 0

    @property
    def in_guaranteed_regime(self) -> bool:
        return self.ok and self.positive

    def summary(self) -> str:
        lines = [f"{name}: {'pass' if ok else 'FAIL'}" for name, ok in self.clauses.items()]
        lines.append(
            f"positivity (sufficient condition, c={self.c_lambda:.6g}): "
            f"{'pass' if self.positivity_sufficient else 'not met'}"
        )
        lines.append(
            f"scan k<={self.k_scan}: min ell={self.min_ell:.6g} at k={self.argmin_ell}, "
            f"{self.n_nonpositive} non-positive"
        )
        if not self.positive:
            lines.append("outside guaranteed regime (real sinh branch only)")
        return "\n".join(lines)


def eigenvalues(k: np.ndarray | int, domain_length: float = 1.0) -> np.ndarray:
    """Dirichlet eigenvalues ``(k pi / L)^2`` of ``-Delta`` on ``(0, L)``."""
    k = np.asarray(k, dtype=float)
    return (k * np.pi / domain_length) ** 2


def eigenfunction(k: int, x: np.ndarray, domain_length: float = 1.0) -> np.ndarray:
    """Orthonormal eigenfunction ``sqrt(2/L) sin(k pi x / L)``."""
    return np.sqrt(2.0 / domain_length) * np.sin(k * np.pi * np.asarray(x) / domain_length)


def mode_symbol_arrays(spec: ModelSpec, ks: np.ndarray | int) -> tuple[np.ndarray, ...]:
    """Vectorised ``(lam, a, b, ell)`` for an array of mode indices."""
    ks = np.atleast_1d(np.asarray(ks))
    if np.any(ks < 1):
        raise ValueError("mode indices start at 1")
    lam = eigenvalues(ks, spec.domain_length)
    a = np.zeros_like(lam)
    for alpha, theta in spec.elastic_terms:
        a += theta * lam**alpha
    b = np.zeros_like(lam)
    for beta, eta in spec.damping_terms:
        b += eta * lam**beta
    ell = -a - b * b / 4.0
    return lam, a, b, ell


def mode_symbols(spec: ModelSpec, k: int) -> ModeSymbol:
    if k < 1:
        raise ValueError("mode index k must be >= 1")
    lam, a, b, ell = (float(v[0]) for v in mode_symbol_arrays(spec, k))
    return ModeSymbol(lam=lam, a=a, b=b, ell=ell)


def _positivity_condition(spec: ModelSpec, c: float) -> bool:
    thetas, alphas = spec.thetas, spec.alphas
    etas, betas = spec.etas, spec.betas
    a1 = alphas[0]
    if c >= 1.0:
        rhs = np.sum(np.abs(thetas[1:])) + 0.25 * np.sum(np.abs(np.outer(etas, etas)))
    else:
        rhs = np.sum(np.abs(thetas[1:]) * c ** (alphas[1:] - a1))
        rhs += 0.25 * np.sum(np.abs(np.outer(etas, etas)) * c ** (np.add.outer(betas, betas) - a1))
    return bool(abs(thetas[0]) > rhs)


def validate_parameters(spec: ModelSpec, k_scan: int = DEFAULT_K_SCAN) -> ValidationReport:
    """Check the parameter assumptions and positivity of ``L_{theta,eta}``.

    Raises
    ------
    ParameterError
        For an empty elastic list, ``alpha_1 <= 0`` or ``alpha_1 < 2 beta_1``
        (super-damped specs are not supported).
    """
    if spec.p == 0:
        raise ParameterError("elastic operator needs at least one term")
    if not spec.alpha1 > 0:
        raise ParameterError(f"alpha_1 must be positive, got {spec.alpha1}")
    if spec.alpha1 < 2 * spec.beta1:
        raise ParameterError(
            f"alpha_1 = {spec.alpha1} < 2 beta_1 = {2 * spec.beta1}: super-damped regime is out of scope"
        )
    clauses = {
        "(i) theta_1 < 0": spec.theta1 < 0,
        "(ii) beta_1 > 0 => eta_1 < 0": not (spec.beta1 > 0) or spec.eta1 < 0,
        "(iii) alpha_1 >= 2 beta_1": spec.alpha1 >= 2 * spec.beta1,
    }
    if spec.alpha1 == 2 * spec.beta1 and spec.q > 0:
        clauses["(iii) alpha_1 = 2 beta_1 => theta_1 + eta_1^2/4 < 0"] = (
            spec.theta1 + spec.eta1**2 / 4 < 0
        )
    c = float(eigenvalues(1, spec.domain_length))
    sufficient = all(clauses.values()) and _positivity_condition(spec, c)
    _, _, _, ell = mode_symbol_arrays(spec, np.arange(1, k_scan + 1))
    i = int(np.argmin(ell))
    return ValidationReport(
        clauses=clauses,
        positivity_sufficient=sufficient,
        c_lambda=c,
        k_scan=k_scan,
        min_ell=float(ell[i]),
        argmin_ell=i + 1,
        n_nonpositive=int(np.count_nonzero(ell <= 0)),
    )


PRESETS: dict[str, dict[str, Any]] = {
    # weakly damped wave: dv = (0.3 Delta u - 0.3 v) dt + dW
    "wave_weak": dict(elastic_terms=((1.0, -0.3),), damping_terms=((0.0, -0.3),)),
    # weakly damped plate: dv = (-0.3 Delta^2 u - 0.3 v) dt + dW
    "plate_weak": dict(elastic_terms=((2.0, -0.3),), damping_terms=((0.0, -0.3),)),
    # structurally damped plate: dv = (-0.3 Delta^2 u + 0.3 Delta v) dt + dW
    "plate_structural": dict(elastic_terms=((2.0, -0.3),), damping_terms=((1.0, -0.3),)),
}


def preset(name: str, **overrides: Any) -> ModelSpec:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    base.setdefault("name", name)
    return ModelSpec(**base)


def model_from_mapping(data: Mapping[str, Any]) -> ModelSpec:
    """Build a spec from a parsed config mapping.

    Accepts either ``preset = "..."`` at top level, a ``[model]`` table, or
    both (table entries override the preset)::

        preset = "plate_structural"
        [model]
        horizon = 2.0
        elastic = [[2.0, -0.3]]
        damping = [[1.0, -0.3]]
    """
    table = dict(data.get("model", {}))
    name = table.pop("preset", data.get("preset"))
    kwargs: dict[str, Any] = {}
    renames = {"elastic": "elastic_terms", "damping": "damping_terms", "T": "horizon", "L": "domain_length"}
    for key, value in table.items():
        key = renames.get(key, key)
        if key not in {"elastic_terms", "damping_terms", "domain_length", "horizon", "initial_u", "initial_v", "name"}:
            raise ParameterError(f"unknown model key {key!r}")
        kwargs[key] = value
    if name is not None:
        return preset(name, **kwargs)
    if "elastic_terms" not in kwargs:
        raise ParameterError("config needs a preset or an elastic term list")
    return ModelSpec(**kwargs)


def load_model_config(path: str | Path) -> ModelSpec:
    with open(path, "rb") as fh:
        return model_from_mapping(tomllib.load(fh))
