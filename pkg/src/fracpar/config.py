"""Flat ``key=value`` run configuration with validation and a stable digest."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Invalid configuration key or value."""


BUILTINS = ("identity", "anisotropic", "rotating-nonsymmetric", "checkerboard")
ROUTES = ("fourier", "balakrishnan", "semigroup")


@dataclass
class RunConfig:
    """Every setting of a command-line run.

    ``coefficients`` is a builtin name or ``file:<path>`` pointing at a
    FRACPAR1 matrix field.  ``input`` names a FRACPAR1 field; when empty a
    random field of kind ``field_kind`` is drawn from ``seed``.
    """

    spatial_dims: int = 1
    nx: int = 64
    nt: int = 64
    Lx: float = 2 * math.pi
    Lt: float = 2 * math.pi
    coefficients: str = "identity"
    coeff_scale: float = 1.0
    time_mode: str = "spectral"
    s: float = 0.5
    routes: str = "fourier"
    quad_scheme: str = "log-trapezoid"
    quad_nodes: int = 200
    solver_tol: float = 1e-10
    solver_max_iter: int = 500
    sigma: str = "auto"
    poisson_tail_tol: float = 1e-12
    seed: int = 1
    field_kind: str = "smooth"
    input: str = ""
    output: str = "fracpar-out"
    lambdas: str = ""
    dtn_lambda0: float = 0.1
    dtn_rungs: int = 4
    source_x: int = -1
    source_t: int = 0
    horizon: float = 0.0
    substeps: int = 1
    kernel_sigma: float = 0.0
    kernel_m: int = 1
    cube_x: float = math.nan
    cube_t: float = math.nan
    cube_radius: float = 0.45
    exterior: str = "rough"
    holder_dmin: float = 0.0

    # -- parsing -------------------------------------------------------------
    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_pairs(cls, pairs: dict) -> "RunConfig":
        cfg = cls()
        for k, v in pairs.items():
            cfg.set(k, v)
        cfg.validate()
        return cfg

    def set(self, key: str, value: str) -> None:
        types = {f.name: f.type for f in fields(self)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        typ = types[key]
        try:
            if typ in ("int", int):
                val = int(value)
            elif typ in ("float", float):
                val = float(value)
            else:
                val = str(value).strip()
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r}") from exc
        setattr(self, key, val)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.spatial_dims in (1, 2), "spatial_dims must be 1 or 2")
        for k in ("nx", "nt"):
            v = getattr(self, k)
            need(v >= 4 and v % 2 == 0, f"{k} must be an even integer >= 4")
        need(self.Lx > 0 and self.Lt > 0, "periods must be positive")
        need(self.coefficients in BUILTINS or self.coefficients.startswith("file:"),
             f"coefficients must be one of {BUILTINS} or file:<path>")
        need(self.coeff_scale > 0, "coeff_scale must be positive")
        need(self.time_mode in ("spectral", "factorized", "backward"), "unknown time_mode")
        need(0.01 <= self.s <= 0.99, "s must lie in [0.01, 0.99]")
        rs = self.route_list()
        need(len(rs) > 0 and all(r in ROUTES for r in rs), f"routes must be drawn from {ROUTES}")
        need(self.quad_scheme in ("log-trapezoid", "gauss-jacobi"), "quad_scheme must be log-trapezoid or gauss-jacobi")
        need(self.quad_nodes >= 8, "quad_nodes must be at least 8")
        need(0 < self.solver_tol < 1, "solver_tol must lie in (0, 1)")
        need(self.solver_max_iter >= 1, "solver_max_iter must be positive")
        if self.sigma != "auto":
            try:
                need(float(self.sigma) > 0, "sigma must be positive or auto")
            except ValueError:
                raise ConfigError("sigma must be a number or auto") from None
        need(0 < self.poisson_tail_tol <= 1e-6, "poisson_tail_tol must lie in (0, 1e-6]")
        need(self.seed >= 0, "seed must be nonnegative")
        need(self.field_kind in ("full", "smooth", "nonnegative"), "field_kind must be full, smooth or nonnegative")
        need(bool(self.output), "output must be set")
        try:
            lam = self.lambda_list()
        except ValueError:
            raise ConfigError("lambdas must be a comma-separated list of numbers") from None
        need(all(x > 0 for x in lam), "lambdas must be positive")
        need(self.dtn_lambda0 > 0, "dtn_lambda0 must be positive")
        need(self.dtn_rungs >= 3, "dtn_rungs must be at least 3")
        need(-1 <= self.source_x < self.nx, "source_x outside the grid")
        need(0 <= self.source_t < self.nt, "source_t outside the grid")
        need(self.horizon >= 0 and self.horizon <= self.Lt, "horizon must lie in [0, Lt]")
        need(self.substeps >= 1, "substeps must be positive")
        need(self.kernel_sigma >= 0, "kernel_sigma must be nonnegative")
        need(self.kernel_m >= 1, "kernel_m must be positive")
        need(self.cube_radius > 0, "cube_radius must be positive")
        need(self.exterior in ("rough", "constant"), "exterior must be rough or constant")
        need(self.holder_dmin >= 0, "holder_dmin must be nonnegative")

    def route_list(self) -> list:
        return [r.strip() for r in self.routes.split(",") if r.strip()]

    def lambda_list(self) -> list:
        return [float(x) for x in self.lambdas.split(",") if x.strip()]

    def sigma_value(self):
        return None if self.sigma == "auto" else float(self.sigma)

    # -- digest ----------------------------------------------------------------
    def canonical_text(self) -> str:
        return "".join(f"{k}={_canon(getattr(self, k))}\n" for k in sorted(self.keys()))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _canon(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | None, overrides=()) -> RunConfig:
    """Read ``path`` (optional) and apply ``key=value`` overrides in order."""
    pairs = {}
    if path:
        try:
            with open(path) as fh:
                pairs.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return RunConfig.from_pairs(pairs)
