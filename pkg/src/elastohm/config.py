"""Run configuration: a flat ``key = value`` text file.

Blank lines and lines starting with ``#`` are ignored.  Unknown keys are an
error so that typos do not silently fall back to defaults.  Every key and its
default is listed in :data:`DEFAULTS`.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from .amvm import AmvmConfig
from .baca import BacaConfig
from .elasticity import ClusterConfig
from .galerkin import QuadratureConfig
from .kernels import MaterialConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "DEFAULTS"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mesh: str = "cube_488"
    labeling: str = "x1 == 1 or x2 == -1 or x3 == 1"
    E: float = 1.0
    nu: float = 0.3
    b_min: int = 15
    beta: float = 0.8
    eps_aca: float = 1e-6
    max_rank: int = 0  # 0: unlimited
    amvm_theta: float = 0.7
    eps_amvm: float = 1e-6
    amvm_relative: bool = True
    amvm_max_iterations: int = 50
    rhs_rank: int = 2
    baca_theta: float = 0.8
    alpha: float = 10.0
    eps_baca: float = 1e-4
    rank_v: int = 8
    rank_k: int = 4
    inner_tol: float = 1e-1
    lookahead: int = 2
    solver: str = "bpcg"
    solve_tol: float = 1e-5
    load: str = "kelvin"  # or "beam"
    kelvin_p: str = "5,5,5"
    kelvin_column: int = 0
    beam_traction: float = -0.1
    quad_order: int = 6
    quad_close: int = 12
    quad_near: int = 8
    quad_far: int = 4
    singular_points: int = 10
    singular_radial: int = 3
    oracle_max_triangles: int = 1000
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        checks = [
            (self.E > 0, "E must be positive"),
            (0.0 < self.nu < 0.5, "nu must lie in (0, 0.5)"),
            (self.b_min >= 1, "b_min must be >= 1"),
            (self.beta > 0, "beta must be positive"),
            (self.eps_aca > 0, "eps_aca must be positive"),
            (self.max_rank >= 0, "max_rank must be >= 0"),
            (0.0 < self.amvm_theta < 1.0, "amvm_theta must lie in (0, 1)"),
            (self.eps_amvm > 0, "eps_amvm must be positive"),
            (0.0 < self.baca_theta < 1.0, "baca_theta must lie in (0, 1)"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.eps_baca > 0, "eps_baca must be positive"),
            (self.rank_v >= 1 and self.rank_k >= 1 and self.rhs_rank >= 1, "ranks must be >= 1"),
            (0.0 < self.inner_tol < 1.0, "inner_tol must lie in (0, 1)"),
            (self.lookahead >= 1, "lookahead must be >= 1"),
            (self.solver in ("bpcg", "gmres"), "solver must be bpcg or gmres"),
            (self.load in ("kelvin", "beam"), "load must be kelvin or beam"),
            (self.kelvin_column in (0, 1, 2), "kelvin_column must be 0, 1 or 2"),
            (self.solve_tol > 0, "solve_tol must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.quadrature
        except ValueError as exc:
            raise ConfigError(f"quadrature: {exc}") from None
        try:
            p = self.point
        except ValueError as exc:
            raise ConfigError(f"kelvin_p: {exc}") from None
        if len(p) != 3:
            raise ConfigError("kelvin_p needs three comma-separated numbers")

    @property
    def point(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.kelvin_p.split(","))

    # component configurations
    @property
    def material(self) -> MaterialConfig:
        return MaterialConfig(E=self.E, nu=self.nu)

    @property
    def cluster(self) -> ClusterConfig:
        return ClusterConfig(b_min=self.b_min, beta=self.beta)

    @property
    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(
            order=self.quad_order, close_order=self.quad_close, near_order=self.quad_near,
            far_order=self.quad_far, singular_points=self.singular_points, singular_radial=self.singular_radial,
        )

    @property
    def amvm(self) -> AmvmConfig:
        return AmvmConfig(theta=self.amvm_theta, eps_amvm=self.eps_amvm, lookahead_steps=self.lookahead,
                          max_iterations=self.amvm_max_iterations, relative=self.amvm_relative)

    @property
    def baca(self) -> BacaConfig:
        return BacaConfig(theta=self.baca_theta, alpha=self.alpha, eps_baca=self.eps_baca, inner_tol=self.inner_tol,
                          rank_v=self.rank_v, rank_k=self.rank_k, lookahead_steps=self.lookahead, solver=self.solver)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


DEFAULTS = RunConfig()
_TYPES = {f.name: type(getattr(DEFAULTS, f.name)) for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(base or DEFAULTS, **values)


def load_config(path: Union[str, Path, None], **overrides) -> RunConfig:
    cfg = DEFAULTS if path is None else parse_config(Path(path).read_text())
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
