"""Periodic spectral grid, complex fields, and the inner products everything else uses.

Conventions fixed once here:
  * the box is [-L, L)^d with n points per axis, spacing h = 2L/n
  * wavenumbers xi = (pi/L) * k for integer k in the usual FFT layout
  * odd-order spectral multipliers zero the Nyquist mode so that real fields
    get real derivatives (the symmetric wavenumber convention)
  * l2_inner(f, g) = h^d sum f * conj(g)  (conjugate-linear in the second slot)
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"SNLF"
_VERSION = 1


class GridMismatch(ValueError):
    pass


class SpatialGrid:
    """Uniform periodic grid on [-L, L)^d, d in {1, 2}, n a power of two per axis."""

    def __init__(self, d: int, n: int, L: float):
        if d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {d}")
        if n < 4 or (n & (n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 4, got {n}")
        if not (L > 0):
            raise ValueError(f"half-extent L must be positive, got {L}")
        self.d = int(d)
        self.n = int(n)
        self.L = float(L)
        self.h = 2.0 * self.L / self.n
        self.x1 = -self.L + self.h * np.arange(self.n)
        # radian wavenumbers, FFT order; integer multiples of pi/L
        self.k1 = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        k1_odd = self.k1.copy()
        k1_odd[self.n // 2] = 0.0  # Nyquist zeroed in odd multipliers
        if self.d == 1:
            self.shape = (self.n,)
            self.coords = (self.x1,)
            self.kvecs = (self.k1,)
            self.kvecs_odd = (k1_odd,)
            self.k2 = self.k1 ** 2
        else:
            self.shape = (self.n, self.n)
            X, Y = np.meshgrid(self.x1, self.x1, indexing="ij")
            self.coords = (X, Y)
            KX, KY = np.meshgrid(self.k1, self.k1, indexing="ij")
            self.kvecs = (KX, KY)
            KXo, KYo = np.meshgrid(k1_odd, k1_odd, indexing="ij")
            self.kvecs_odd = (KXo, KYo)
            self.k2 = KX ** 2 + KY ** 2
        self.size = self.n ** self.d
        self.cell = self.h ** self.d
        # 2/3-rule mask: keep |index| <= n/3 per axis
        idx = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n))
        keep = idx <= self.n / 3.0
        if self.d == 1:
            self.dealias_mask = keep
        else:
            self.dealias_mask = np.outer(keep, keep)

    def r2(self):
        """|x|^2 on the grid."""
        out = np.zeros(self.shape)
        for c in self.coords:
            out = out + c ** 2
        return out

    def __eq__(self, other):
        return (
            isinstance(other, SpatialGrid)
            and self.d == other.d
            and self.n == other.n
            and self.L == other.L
        )

    def __hash__(self):
        return hash((self.d, self.n, self.L))

    def __repr__(self):
        return f"SpatialGrid(d={self.d}, n={self.n}, L={self.L})"


class Field:
    """Complex samples on a SpatialGrid with a lazily cached spectrum.

    The spectrum cache is invalidated by set_values / mutate; freeze() makes the
    field immutable so it can be shared safely.
    """

    __slots__ = ("grid", "_values", "_spec", "_frozen", "meta")

    def __init__(self, grid: SpatialGrid, values, meta=None):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != grid.shape:
            raise GridMismatch(f"values shape {values.shape} != grid shape {grid.shape}")
        self.grid = grid
        self._values = values
        self._spec = None
        self._frozen = False
        self.meta = dict(meta) if meta else {}

    @classmethod
    def from_spectrum(cls, grid: SpatialGrid, spec, meta=None):
        f = cls(grid, np.fft.ifftn(spec), meta=meta)
        f._spec = np.asarray(spec, dtype=np.complex128)
        return f

    @property
    def values(self):
        v = self._values.view()
        v.setflags(write=False)
        return v

    @property
    def spectrum(self):
        if self._spec is None:
            self._spec = np.fft.fftn(self._values)
        s = self._spec.view()
        s.setflags(write=False)
        return s

    def set_values(self, values):
        if self._frozen:
            raise RuntimeError("field is frozen")
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != self.grid.shape:
            raise GridMismatch("shape mismatch on set_values")
        self._values = values
        self._spec = None

    def freeze(self):
        self._frozen = True
        return self

    def copy(self):
        return Field(self.grid, self._values.copy(), meta=self.meta)

    def __repr__(self):
        return f"Field(grid={self.grid!r}, |max|={np.abs(self._values).max():.3e})"


def _same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise GridMismatch("fields live on different grids")


def laplacian(f: Field) -> Field:
    return Field.from_spectrum(f.grid, -f.grid.k2 * f.spectrum)


def gradient(f: Field):
    """Spectral gradient, one Field per axis (Nyquist zeroed)."""
    return tuple(
        Field.from_spectrum(f.grid, 1j * k * f.spectrum) for k in f.grid.kvecs_odd
    )


def gradient_arrays(grid: SpatialGrid, values):
    """Gradient of a raw array; returns a list of arrays. Hot-loop variant."""
    spec = np.fft.fftn(values)
    return [np.fft.ifftn(1j * k * spec) for k in grid.kvecs_odd]


def l2_inner(f: Field, g: Field) -> complex:
    _same_grid(f, g)
    return f.grid.cell * complex(np.vdot(g.values, f.values))  # vdot conjugates first arg


def l2_norm(f: Field) -> float:
    return float(np.sqrt(f.grid.cell) * np.linalg.norm(f.values))


def lp_power(f: Field, q: float) -> float:
    """integral of |f|^q."""
    return float(f.grid.cell * np.sum(np.abs(f.values) ** q))


def h1_inner(f: Field, g: Field) -> complex:
    _same_grid(f, g)
    grid = f.grid
    w = (1.0 + grid.k2) * (grid.cell / grid.size)
    return complex(np.sum(w * f.spectrum * np.conj(g.spectrum)))


def h1_norm(f: Field) -> float:
    grid = f.grid
    w = (1.0 + grid.k2) * (grid.cell / grid.size)
    return float(np.sqrt(np.sum(w * np.abs(f.spectrum) ** 2)))


def grad_norm_sq(f: Field) -> float:
    """||grad f||_{L2}^2 via the spectrum (Nyquist-symmetric multiplier)."""
    grid = f.grid
    w = grid.k2 * (grid.cell / grid.size)
    return float(np.sum(w * np.abs(f.spectrum) ** 2))


def dealias(f: Field) -> Field:
    return Field.from_spectrum(f.grid, f.grid.dealias_mask * f.spectrum)


def dealias_values(grid: SpatialGrid, values):
    return np.fft.ifftn(grid.dealias_mask * np.fft.fftn(values))


def field_to_bytes(f: Field, time: float = 0.0) -> bytes:
    head = struct.pack("<4sIIIdd", _MAGIC, _VERSION, f.grid.d, f.grid.n, f.grid.L, time)
    payload = np.ascontiguousarray(f.values).astype("<c16").tobytes()
    return head + payload


def field_from_bytes(buf: bytes):
    """Returns (Field, time)."""
    head_size = struct.calcsize("<4sIIIdd")
    magic, version, d, n, L, time = struct.unpack("<4sIIIdd", buf[:head_size])
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a field snapshot")
    grid = SpatialGrid(d, n, L)
    values = np.frombuffer(buf[head_size:], dtype="<c16").reshape(grid.shape)
    return Field(grid, values.copy()), time


def field_to_csv(f: Field, path):
    """Small-grid CSV dump: coordinates, re, im."""
    cols = [c.reshape(-1) for c in f.grid.coords]
    v = f.values.reshape(-1)
    header = ",".join([f"x{j+1}" for j in range(f.grid.d)] + ["re", "im"])
    data = np.column_stack(cols + [v.real, v.imag])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
