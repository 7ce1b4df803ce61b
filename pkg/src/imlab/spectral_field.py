"""Divergence-free, zero-mean vector fields on the torus stored as Fourier coefficients."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO

import numpy as np

SNAPSHOT_MAGIC = "IMLAB1"


@dataclass(frozen=True)
class GridSpec:
    """Retained modes are the box ``|j|_inf <= max_mode``.

    The physical grid has ``2 * (max_mode + 1)`` points per axis, which keeps
    products of fields supported below the dealias cut free of aliasing.
    """

    dim: int
    max_mode: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.max_mode) != self.max_mode or self.max_mode < 1:
            raise ValueError(f"max_mode must be a positive integer, got {self.max_mode}")
        frac = Fraction(self.dealias_fraction).limit_denominator(10**6)
        if not 0 < frac <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "max_mode", int(self.max_mode))
        object.__setattr__(self, "dealias_fraction", frac)

    @property
    def n(self) -> int:
        return 2 * (self.max_mode + 1)

    @property
    def dealias_cut(self) -> int:
        """Largest max-norm kept by the dealias mask."""
        return max(math.ceil(self.dealias_fraction * (self.max_mode + 1)) - 1, 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim,) + (self.n,) * self.dim

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(range(1, self.dim + 1))


class _Tables:
    """Immutable per-grid lookups shared by every field on that grid."""

    def __init__(self, grid: GridSpec):
        n, d = grid.n, grid.dim
        k1 = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        mesh = np.meshgrid(*([k1] * d), indexing="ij")
        self.k = np.stack(mesh)
        self.ksq = np.sum(self.k**2, axis=0)
        kinf = np.max(np.abs(self.k), axis=0)
        nonzero = self.ksq > 0
        self.retained = nonzero & (kinf <= grid.max_mode)
        self.dealiased = nonzero & (kinf <= grid.dealias_cut)
        safe = np.where(nonzero, self.ksq, 1).astype(float)
        self.kmag = np.sqrt(safe) * nonzero
        # explicit Leray matrices P^j = I - j j^T / |j|^2, zero where not retained
        eye = np.eye(d).reshape((d, d) + (1,) * d)
        proj = eye - self.k[:, None] * self.k[None, :] / safe
        self.leray = proj * self.retained
        for arr in (self.k, self.ksq, self.retained, self.dealiased, self.kmag, self.leray):
            arr.setflags(write=False)

    def weight(self, s: float) -> np.ndarray:
        """|j|^{2s} on retained modes, 0 elsewhere."""
        return _weight(self, float(s))


def _weight(tables: _Tables, s: float) -> np.ndarray:
    cache = tables.__dict__.setdefault("_weights", {})
    if s not in cache:
        w = np.zeros(tables.ksq.shape)
        m = tables.retained
        w[m] = tables.ksq[m].astype(float) ** s
        w.setflags(write=False)
        cache[s] = w
    return cache[s]


@lru_cache(maxsize=None)
def grid_tables(grid: GridSpec) -> _Tables:
    return _Tables(grid)


def mirror(coeffs: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Array indexed at ``-j`` in FFT layout."""
    return np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)


def hermitian_part(coeffs: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    return 0.5 * (coeffs + np.conj(mirror(coeffs, axes)))


def apply_leray(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Multiply every coefficient by its Leray matrix; drops j = 0 and unretained modes."""
    return np.einsum("ab...,b...->a...", grid_tables(grid).leray, coeffs)


class SpectralField:
    """Immutable real divergence-free field with full (j and -j) coefficient storage.

    ``coeffs`` has shape ``(d, n, ..., n)`` in FFT index order so that
    ``u(x) = sum_j coeffs[:, j] exp(i j.x)``.
    """

    __slots__ = ("grid", "_coeffs")

    def __init__(self, grid: GridSpec, coeffs, *, div_tol: float = 1e-12):
        c = np.asarray(coeffs, dtype=complex)
        if c.shape != grid.shape:
            raise ValueError(f"coefficient array has shape {c.shape}, grid expects {grid.shape}")
        tables = grid_tables(grid)
        c = hermitian_part(c, grid.spatial_axes) * tables.retained
        div = np.abs(np.sum(tables.k * c, axis=0))
        scale = np.linalg.norm(c, axis=0) * tables.kmag
        if np.any(div > div_tol * scale + 1e-300):
            raise ValueError("coefficients are not divergence-free; use leray_project")
        self._init(grid, c)

    def _init(self, grid, c):
        c.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "_coeffs", c)

    def __setattr__(self, name, value):
        raise AttributeError("SpectralField is immutable")

    @classmethod
    def _trusted(cls, grid: GridSpec, coeffs: np.ndarray) -> SpectralField:
        """Wrap an array already known to satisfy the invariants (no copy checks)."""
        obj = cls.__new__(cls)
        c = np.array(coeffs, dtype=complex)
        obj._init(grid, c)
        return obj

    @classmethod
    def _unchecked(cls, grid: GridSpec, coeffs) -> SpectralField:
        """Test-only constructor that keeps whatever is passed, including a j = 0 mode."""
        return cls._trusted(grid, np.asarray(coeffs, dtype=complex))

    @classmethod
    def zeros(cls, grid: GridSpec) -> SpectralField:
        return cls._trusted(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_modes(cls, grid: GridSpec, modes: dict) -> SpectralField:
        """Build from ``{wavevector: d-vector}``; missing conjugates are filled in."""
        c = np.zeros(grid.shape, dtype=complex)
        n = grid.n
        given = {tuple(int(x) for x in j) for j in modes}
        for j, vec in modes.items():
            j = tuple(int(x) for x in j)
            if max(abs(x) for x in j) > grid.max_mode:
                raise ValueError(f"mode {j} outside the retained box")
            idx = (slice(None),) + tuple(x % n for x in j)
            c[idx] += np.asarray(vec, dtype=complex)
            neg = tuple(-x for x in j)
            if neg not in given:
                c[(slice(None),) + tuple(x % n for x in neg)] += np.conj(np.asarray(vec, dtype=complex))
        return cls(grid, c)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def dim(self) -> int:
        return self.grid.dim

    def coefficient(self, j) -> np.ndarray:
        n = self.grid.n
        return self._coeffs[(slice(None),) + tuple(int(x) % n for x in j)]

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField._trusted(self.grid, self._coeffs + other._coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField._trusted(self.grid, self._coeffs - other._coeffs)

    def __neg__(self):
        return SpectralField._trusted(self.grid, -self._coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar) or np.iscomplexobj(scalar):
            return NotImplemented
        return SpectralField._trusted(self.grid, self._coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self._coeffs, other._coeffs)

    __hash__ = None

    def inner(self, other: SpectralField) -> float:
        """H inner product ``Re sum_j u_j . conj(v_j)``."""
        self._check(other)
        return float(np.vdot(other._coeffs, self._coeffs).real)

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)

    def is_zero(self) -> bool:
        return not np.any(self._coeffs)

    def __repr__(self):
        return f"SpectralField(d={self.grid.dim}, M={self.grid.max_mode}, |u|_H={self.norm():.3e})"


def sobolev_norm(field: SpectralField, s: float) -> float:
    """``sqrt(sum_j |j|^{2s} |u_j|^2)``; ``s`` may be negative."""
    w = grid_tables(field.grid).weight(s)
    return math.sqrt(float(np.sum(w * np.sum(np.abs(field.coeffs) ** 2, axis=0))))


def leray_project(raw, grid: GridSpec | None = None) -> SpectralField:
    """Project a raw coefficient array (or a field) onto divergence-free fields."""
    if isinstance(raw, SpectralField):
        grid, raw = raw.grid, raw.coeffs
    elif grid is None:
        raise ValueError("grid is required for a raw coefficient array")
    raw = np.asarray(raw, dtype=complex)
    if raw.shape != grid.shape:
        raise ValueError(f"coefficient array has shape {raw.shape}, grid expects {grid.shape}")
    c = apply_leray(hermitian_part(raw, grid.spatial_axes), grid)
    return SpectralField._trusted(grid, c)


def to_physical(field: SpectralField) -> np.ndarray:
    """Real values on the uniform grid ``x_k = 2 pi k / n``, shape ``(d, n, ..., n)``."""
    return np.fft.ifftn(field.coeffs, axes=field.grid.spatial_axes, norm="forward").real


def from_physical(values, grid: GridSpec) -> np.ndarray:
    """Raw coefficients of grid values with the mean and modes beyond the dealias cut removed."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"physical array has shape {values.shape}, grid expects {grid.shape}")
    c = np.fft.fftn(values, axes=grid.spatial_axes, norm="forward")
    return c * grid_tables(grid).dealiased


def dealias(field: SpectralField) -> SpectralField:
    """Drop modes beyond the dealias cut."""
    return SpectralField._trusted(field.grid, field.coeffs * grid_tables(field.grid).dealiased)


def random_field(grid: GridSpec, seed, decay_exponent: float = 0.0, *,
                 amplitude: float = 1.0, dealiased: bool = True) -> SpectralField:
    """Random divergence-free field with ``|u_j| = amplitude * |j|^{-s0}`` on its support.

    Directions and phases are random; moduli are exact so Sobolev norms are
    known in closed form.
    """
    if decay_exponent < 0:
        raise ValueError("decay_exponent must be nonnegative")
    rng = np.random.default_rng(seed)
    t = grid_tables(grid)
    g = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    h = apply_leray(g + np.conj(mirror(g, grid.spatial_axes)), grid)
    mask = t.dealiased if dealiased else t.retained
    mod = np.linalg.norm(h, axis=0)
    target = np.zeros(mod.shape)
    target[mask] = amplitude * t.ksq[mask].astype(float) ** (-decay_exponent / 2)
    scale = np.divide(target, mod, out=np.zeros_like(mod), where=mod > 0)
    return SpectralField._trusted(grid, h * scale)


def canonical_mask(grid: GridSpec) -> np.ndarray:
    """Lexicographically positive wavevectors among the retained modes."""
    t = grid_tables(grid)
    pos = np.zeros(t.ksq.shape, dtype=bool)
    undecided = np.ones(t.ksq.shape, dtype=bool)
    for comp in t.k:
        pos |= undecided & (comp > 0)
        undecided &= comp == 0
    return pos & t.retained


def write_snapshot(field: SpectralField, dest: str | Path | BinaryIO) -> None:
    grid = field.grid
    t = grid_tables(grid)
    mask = canonical_mask(grid)
    idx = np.argwhere(mask)
    js = t.k[(slice(None),) + tuple(idx.T)].T
    vals = field.coeffs[(slice(None),) + tuple(idx.T)].T
    keep = np.any(vals != 0, axis=1)
    js, vals = js[keep], vals[keep]
    order = np.lexsort(js.T[::-1])
    js, vals = js[order], vals[order]
    rec = np.zeros(len(js), dtype=[("j", "<i4", (grid.dim,)), ("v", "<f8", (2 * grid.dim,))])
    rec["j"] = js
    rec["v"] = np.stack([vals.real, vals.imag], axis=-1).reshape(len(js), -1)
    header = f"{SNAPSHOT_MAGIC} d={grid.dim} M={grid.max_mode} count={len(js)}\n".encode()
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            fh.write(header + rec.tobytes())
    else:
        dest.write(header + rec.tobytes())


def read_snapshot(src: str | Path | BinaryIO) -> SpectralField:
    if isinstance(src, (str, Path)):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    line, _, body = data.partition(b"\n")
    parts = line.decode().split()
    if not parts or parts[0] != SNAPSHOT_MAGIC:
        raise ValueError("not an IMLAB1 snapshot")
    meta = dict(p.split("=", 1) for p in parts[1:])
    d, M, count = int(meta["d"]), int(meta["M"]), int(meta["count"])
    rec_size = 4 * d + 16 * d
    if len(body) != count * rec_size:
        raise ValueError(f"snapshot body has {len(body)} bytes, expected {count * rec_size}")
    grid = GridSpec(d, M)
    c = np.zeros(grid.shape, dtype=complex)
    n = grid.n
    for i in range(count):
        chunk = body[i * rec_size:(i + 1) * rec_size]
        j = struct.unpack(f"<{d}i", chunk[:4 * d])
        v = np.frombuffer(chunk[4 * d:], dtype="<f8").reshape(d, 2)
        vec = v[:, 0] + 1j * v[:, 1]
        c[(slice(None),) + tuple(x % n for x in j)] = vec
        c[(slice(None),) + tuple(-x % n for x in j)] = np.conj(vec)
    return SpectralField(grid, c)
