"""Periodic space-time grids, fields and the basic norms.

Fields live on the torus ``[0, Lx)^n x [0, Lt)`` sampled on a uniform grid.
Arrays are stored with shape ``(nt,) + (nx,) * n`` in C order, so the last
spatial index runs fastest and time is the slowest index.

Fourier conventions
-------------------
A field is expanded as ``u = sum_k c_k exp(i (xi . x + tau t))`` where the
coefficients come from :func:`fourier_coefficients`.  With this convention the
time derivative acts as the multiplier ``i tau``.  The Hilbert transform in
time is taken with multiplier ``+i sign(tau)`` on ``exp(i tau t)``, which is the
sign that makes ``D_t^{1/2} H_T D_t^{1/2}`` equal to ``d/dt``.  At the Nyquist
frequency ``sign`` is taken as ``+1``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[0, Lx)^n x [0, Lt)``.

    Parameters
    ----------
    spatial_dims : int
        Number of spatial dimensions ``n`` (1 or 2).
    nx : int
        Points per spatial axis (even, at least 4).
    nt : int
        Points in time (even, at least 4).
    Lx, Lt : float
        Spatial and temporal periods.
    """

    spatial_dims: int = 1
    nx: int = 64
    nt: int = 64
    Lx: float = 2.0 * math.pi
    Lt: float = 2.0 * math.pi

    def __post_init__(self):
        if self.spatial_dims not in (1, 2):
            raise ValueError("spatial_dims must be 1 or 2")
        for name in ("nx", "nt"):
            v = getattr(self, name)
            if int(v) != v or v < 4 or v % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {v}")
        if not (self.Lx > 0 and self.Lt > 0):
            raise ValueError("periods must be positive")

    @property
    def n(self) -> int:
        return self.spatial_dims

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dt(self) -> float:
        return self.Lt / self.nt

    @property
    def shape(self) -> tuple:
        return (self.nt,) + (self.nx,) * self.spatial_dims

    @property
    def spatial_shape(self) -> tuple:
        return (self.nx,) * self.spatial_dims

    @property
    def size(self) -> int:
        return self.nt * self.nx ** self.spatial_dims

    @property
    def cell_volume(self) -> float:
        """Quadrature weight ``dx^n dt`` of a single grid point."""
        return self.dx ** self.spatial_dims * self.dt

    @property
    def volume(self) -> float:
        return self.Lx ** self.spatial_dims * self.Lt

    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    def mesh(self) -> tuple:
        """Coordinate arrays ``(t, x_1, ..., x_n)`` broadcast to ``shape``."""
        axes = [self.t()] + [self.x()] * self.spatial_dims
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def tau(self) -> np.ndarray:
        """Angular time frequencies, broadcastable against ``shape``."""
        tau = 2.0 * np.pi * np.fft.fftfreq(self.nt, d=self.dt)
        return tau.reshape((self.nt,) + (1,) * self.spatial_dims)

    def xi(self, axis: int) -> np.ndarray:
        """Angular frequencies along spatial ``axis`` (0-based), broadcastable."""
        xi = 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)
        shape = [1] * (self.spatial_dims + 1)
        shape[axis + 1] = self.nx
        return xi.reshape(shape)

    def stencil_symbol(self) -> np.ndarray:
        """Symbol ``sum_k 2 (1 - cos(xi_k dx)) / dx^2`` of the discrete Laplacian."""
        out = np.zeros((1,) + self.spatial_shape)
        for k in range(self.spatial_dims):
            out = out + 2.0 * (1.0 - np.cos(self.xi(k) * self.dx)) / self.dx ** 2
        return out

    def sign_tau(self) -> np.ndarray:
        """``sign(tau)`` with the Nyquist entry set to ``+1``."""
        sgn = np.sign(self.tau())
        sgn[self.nt // 2] = 1.0
        return sgn

    def describe(self) -> str:
        return (f"n={self.spatial_dims} nx={self.nx} nt={self.nt} "
                f"Lx={self.Lx!r} Lt={self.Lt!r}")


class Field:
    """Complex samples of a function on a :class:`Grid`.

    The value array is copied on construction and made read-only, so a
    ``Field`` behaves as an immutable value.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        arr = np.array(values, dtype=complex)
        if arr.size == grid.size and arr.shape != grid.shape:
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise ValueError(f"values of shape {arr.shape} do not fit grid {grid.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: complex = 1.0) -> "Field":
        return cls(grid, np.full(grid.shape, value, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable) -> "Field":
        """Sample ``func(t, x_1, ..., x_n)`` on the grid."""
        return cls(grid, func(*grid.mesh()))

    @classmethod
    def mode(cls, grid: Grid, kt: int, kx: Sequence[int] | int) -> "Field":
        """Unit-modulus Fourier mode with integer wave numbers ``kt`` and ``kx``."""
        kx = np.atleast_1d(kx)
        if kx.size != grid.spatial_dims:
            raise ValueError("need one spatial wave number per axis")
        mesh = grid.mesh()
        phase = 2.0 * np.pi * kt * mesh[0] / grid.Lt
        for k in range(grid.spatial_dims):
            phase = phase + 2.0 * np.pi * kx[k] * mesh[k + 1] / grid.Lx
        return cls(grid, np.exp(1j * phase))

    def _check(self, other: "Field"):
        if not isinstance(other, Field):
            return
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - other)

    def __rsub__(self, other):
        return Field(self.grid, other - self.values)

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            raise TypeError("use .values for pointwise products")
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.grid, self.values / scalar)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field({self.grid.describe()})"

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def conj(self) -> "Field":
        return Field(self.grid, self.values.conj())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def mean(self) -> complex:
        return complex(self.values.mean())

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def _same_grid(u: Field, v: Field):
    if u.grid != v.grid:
        raise GridMismatchError("fields live on different grids")


def l2_inner(u: Field, v: Field) -> complex:
    """Riemann-sum inner product ``dx^n dt sum u conj(v)``."""
    _same_grid(u, v)
    return complex(np.vdot(v.values.ravel(), u.values.ravel()) * u.grid.cell_volume)


def l2_norm(u: Field) -> float:
    return float(np.linalg.norm(u.values.ravel()) * math.sqrt(u.grid.cell_volume))


def sup_norm(u: Field) -> float:
    return float(np.max(np.abs(u.values)))


def fourier_coefficients(u: Field) -> np.ndarray:
    """Coefficients ``c_k`` with ``u = sum_k c_k exp(i(xi.x + tau t))``."""
    return np.fft.fftn(u.values) / u.grid.size


def from_fourier(grid: Grid, coeffs: np.ndarray) -> Field:
    return Field(grid, np.fft.ifftn(coeffs) * grid.size)


def apply_multiplier(u: Field, symbol) -> Field:
    """Apply a Fourier multiplier given on the grid of frequencies."""
    return Field(u.grid, np.fft.ifftn(np.fft.fftn(u.values) * symbol))


def half_time_derivative(u: Field) -> Field:
    """``D_t^{1/2}`` with symbol ``|tau|^{1/2}``."""
    return apply_multiplier(u, np.sqrt(np.abs(u.grid.tau())))


def hilbert_transform_t(u: Field) -> Field:
    """Hilbert transform in time, multiplier ``+i sign(tau)`` on ``exp(i tau t)``.

    The zero mode is mapped to zero; the Nyquist mode uses ``sign = +1``.
    """
    sym = 1j * u.grid.sign_tau()
    sym[0] = 0.0
    return apply_multiplier(u, sym)


def time_derivative(u: Field) -> Field:
    """Spectral ``d/dt``; the Nyquist mode is mapped to zero."""
    sym = 1j * u.grid.tau()
    sym[u.grid.nt // 2] = 0.0
    return apply_multiplier(u, sym)


def forward_difference(u: Field, axis: int) -> np.ndarray:
    """``(u(x + dx e_axis) - u(x)) / dx`` for spatial ``axis``; returns an array."""
    ax = axis + 1
    return (np.roll(u.values, -1, axis=ax) - u.values) / u.grid.dx


def gradient_norm(u: Field) -> float:
    """L2 norm of the forward-difference gradient."""
    tot = 0.0
    for k in range(u.grid.spatial_dims):
        tot += float(np.sum(np.abs(forward_difference(u, k)) ** 2))
    return math.sqrt(tot * u.grid.cell_volume)


def energy_norm(u: Field) -> float:
    """``(||u||^2 + ||grad u||^2 + ||D_t^{1/2} u||^2)^{1/2}``."""
    return math.sqrt(l2_norm(u) ** 2 + gradient_norm(u) ** 2
                     + l2_norm(half_time_derivative(u)) ** 2)


def parabolic_sobolev_norm(u: Field, order: float, stencil: bool = False) -> float:
    """Norm ``(||u||^2 + ||F^{-1}((|xi|^2 + i tau)^{order/2} F u)||^2)^{1/2}``.

    Parameters
    ----------
    order : float
        Smoothness order in ``(0, 1]``.  ``order = 1`` is the parabolic energy
        level, comparable with :func:`energy_norm`.
    stencil : bool
        If True, ``|xi|^2`` is replaced by the symbol of the discrete Laplacian
        used elsewhere in the package.
    """
    if not 0.0 < order <= 1.0:
        raise ValueError("order must lie in (0, 1]")
    g = u.grid
    if stencil:
        xi2 = g.stencil_symbol()
    else:
        xi2 = sum(g.xi(k) ** 2 for k in range(g.spatial_dims))
    z = xi2 + 1j * g.tau()
    sym = np.zeros(np.broadcast_shapes(z.shape, g.shape), dtype=complex)
    zz = np.broadcast_to(z, sym.shape)
    nz = zz != 0
    sym[nz] = np.exp(0.5 * order * np.log(zz[nz]))
    return math.sqrt(l2_norm(u) ** 2 + l2_norm(apply_multiplier(u, sym)) ** 2)


@dataclass(frozen=True)
class ParabolicPoint:
    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class ParabolicCube:
    """Cube ``|y_i - x_i| < r``, ``|s - t| < r^2`` around ``center``."""

    center: ParabolicPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def mask(self, grid: Grid, periodic: bool = True) -> np.ndarray:
        """Boolean membership array of shape ``grid.shape``."""
        mesh = grid.mesh()
        r = self.radius
        m = np.abs(_wrap(mesh[0] - self.center.t, grid.Lt if periodic else None)) < r * r
        for k in range(grid.spatial_dims):
            m &= np.abs(_wrap(mesh[k + 1] - self.center.x[k], grid.Lx if periodic else None)) < r
        return m

    def scaled(self, factor: float) -> "ParabolicCube":
        return ParabolicCube(self.center, self.radius * factor)


def _wrap(d, period):
    if period is None:
        return d
    return d - period * np.round(d / period)


def parabolic_distance(p: ParabolicPoint, q: ParabolicPoint, grid: Grid | None = None) -> float:
    """``|x - y| + |t - s|^{1/2}``; periodic minimal image when ``grid`` is given."""
    dx = np.subtract(p.x, q.x)
    dt = p.t - q.t
    if grid is not None:
        dx = _wrap(dx, grid.Lx)
        dt = _wrap(dt, grid.Lt)
    return float(np.linalg.norm(dx) + math.sqrt(abs(dt)))


# ---------------------------------------------------------------------------
# reproducible random fields

class Lcg64:
    """64-bit linear congruential generator.

    ``state <- (a * state + c) mod 2^64`` with Knuth's MMIX constants; uniform
    variates are ``(state >> 11) * 2^-53``.  The first output is produced after
    one step from the seed.
    """

    A = 6364136223846793005
    C = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = int(seed) & self.MASK

    def next_u64(self) -> int:
        self.state = (self.A * self.state + self.C) & self.MASK
        return self.state

    def uniform(self, count: int) -> np.ndarray:
        out = np.empty(count)
        for i in range(count):
            out[i] = (self.next_u64() >> 11) * 2.0 ** -53
        return out


def random_field(grid: Grid, seed: int, kind: str = "full", kmax: int = 4) -> Field:
    """Deterministic real random field.

    ``kind="full"``: i.i.d. uniform values in ``[-1, 1)`` in storage order.
    ``kind="smooth"``: ``Re sum c_k exp(i(k.x + k_t t))`` over integer wave
    numbers with ``|k_j| <= kmax`` in every direction; each ``c_k`` draws a real
    then an imaginary part uniformly in ``[-1, 1)`` (loop order: time wave
    number outermost, last spatial wave number innermost, each ascending) and is
    divided by ``1 + |k|^2 + k_t^2``.
    ``kind="nonnegative"``: i.i.d. uniform values in ``[0, 1)``.
    """
    rng = Lcg64(seed)
    if kind == "full":
        return Field(grid, 2.0 * rng.uniform(grid.size).reshape(grid.shape) - 1.0)
    if kind == "nonnegative":
        return Field(grid, rng.uniform(grid.size).reshape(grid.shape))
    if kind != "smooth":
        raise ValueError(f"unknown random field kind {kind!r}")
    if 2 * kmax >= min(grid.nx, grid.nt):
        raise ValueError("kmax too large for the grid")
    ks = range(-kmax, kmax + 1)
    coeffs = np.zeros(grid.shape, dtype=complex)
    for idx in np.ndindex(*((2 * kmax + 1,) * (grid.spatial_dims + 1))):
        k = [ks[i] for i in idx]
        ab = rng.uniform(2) * 2.0 - 1.0
        c = (ab[0] + 1j * ab[1]) / (1.0 + sum(kk * kk for kk in k))
        coeffs[tuple(k)] += c
    vals = np.fft.ifftn(coeffs) * grid.size
    return Field(grid, vals.real)


# ---------------------------------------------------------------------------
# FRACPAR1 files

_MAGIC = "FRACPAR1"


def _header(grid: Grid, tag: str | None = None) -> bytes:
    parts = [_MAGIC]
    if tag:
        parts.append(tag)
    parts.append(grid.describe())
    return (" ".join(parts) + "\n").encode("ascii")


def _parse_header(line: str):
    tokens = line.split()
    if not tokens or tokens[0] != _MAGIC:
        raise ValueError("not a FRACPAR1 file")
    tag = None
    kv = {}
    for tok in tokens[1:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            kv[k] = v
        else:
            tag = tok
    grid = Grid(spatial_dims=int(kv["n"]), nx=int(kv["nx"]), nt=int(kv["nt"]),
                Lx=float(kv["Lx"]), Lt=float(kv["Lt"]))
    return grid, tag


def _write(path, header: bytes, values: np.ndarray):
    data = np.ascontiguousarray(values, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)


def _read(path):
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii")
        grid, tag = _parse_header(line)
        data = np.frombuffer(fh.read(), dtype="<c16")
    return grid, tag, data


def write_field(path: str | os.PathLike, u: Field) -> None:
    """Write ``u`` in the FRACPAR1 layout (header line, then ``<c16`` values)."""
    _write(path, _header(u.grid), u.values)


def read_field(path: str | os.PathLike) -> Field:
    grid, tag, data = _read(path)
    if tag is not None:
        raise ValueError(f"file holds tagged data {tag!r}, not a scalar field")
    if data.size != grid.size:
        raise ValueError("FRACPAR1 payload size does not match header")
    return Field(grid, data.reshape(grid.shape))


def write_matrix_field(path, grid: Grid, entries: np.ndarray, tag: str = "A") -> None:
    """Write an ``n x n`` matrix per point; channels interleaved per point."""
    _write(path, _header(grid, tag), entries)


def read_matrix_field(path):
    grid, tag, data = _read(path)
    n = grid.spatial_dims
    if data.size != grid.size * n * n:
        raise ValueError("FRACPAR1 payload size does not match header")
    return grid, tag, data.reshape(grid.shape + (n, n))
