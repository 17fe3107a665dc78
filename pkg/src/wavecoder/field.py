"""Sampling grids, complex wavefronts, and the padded-window plumbing shared
by every propagation and modulation routine.

Conventions used throughout the package:
  * square grids, pixel i at x_i = (i - n//2) * dx (origin on the center pixel)
  * frequency bin k of an m-sample window at f_k = (k - m//2) / (m * dx)
  * forward DFT unscaled, inverse DFT scaled by 1/m^2 (numpy's default), so
    Parseval reads  sum |f|^2 = (1/m^2) sum |DFT(f)|^2
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

WFLD_MAGIC = b"WFLD"


def _require_positive(name: str, value) -> None:
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class Grid:
    """Square sampling geometry shared by fields, masks and transfer functions.

    Attributes:
        n: pixels per side (>= 2).
        dx: pixel pitch in meters (same in x and y).
        wavelength: illumination wavelength in meters.
    """

    n: int
    dx: float
    wavelength: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise ValueError(f"grid size must be an integer, got {self.n!r}")
        if self.n < 2:
            raise ValueError(f"grid size must be >= 2, got {self.n}")
        _require_positive("dx", self.dx)
        _require_positive("wavelength", self.wavelength)

    @property
    def center(self) -> int:
        return self.n // 2

    def coords(self) -> np.ndarray:
        """Centered pixel coordinates in meters, shape (n,)."""
        return (np.arange(self.n) - self.center) * self.dx


def make_grid(n: int, dx: float, wavelength: float) -> Grid:
    return Grid(n, dx, wavelength)


@dataclass(frozen=True)
class FrequencyGrid:
    """Centered spatial-frequency sampling of an m-sample computational window.

    Bin k sits at f_k = (k - m//2) * df with df = 1/(m*dx), i.e. the ordering
    produced by fftshift.
    """

    n_pad: int
    df: float

    def __post_init__(self):
        if self.n_pad < 2:
            raise ValueError(f"window size must be >= 2, got {self.n_pad}")
        _require_positive("df", self.df)

    @classmethod
    def for_window(cls, grid: Grid, pad_factor: int = 1) -> "FrequencyGrid":
        if pad_factor < 1:
            raise ValueError(f"pad factor must be >= 1, got {pad_factor}")
        m = grid.n * int(pad_factor)
        return cls(m, 1.0 / (m * grid.dx))

    def freqs(self) -> np.ndarray:
        """Centered bin frequencies in cycles/meter, shape (n_pad,)."""
        return (np.arange(self.n_pad) - self.n_pad // 2) * self.df


class ComplexField:
    """An n x n complex wavefront sampled on a Grid.

    Values are stored as complex128 and frozen after construction; all
    operations return new fields.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=np.complex128)
        if values.shape != (grid.n, grid.n):
            raise ValueError(
                f"field shape {values.shape} does not match grid {grid.n}x{grid.n}"
            )
        if not np.all(np.isfinite(values.view(np.float64))):
            raise ValueError("field contains non-finite samples")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("ComplexField is immutable")

    def with_values(self, values) -> "ComplexField":
        return ComplexField(self.grid, values)


def plane_wave(grid: Grid, fx: float, fy: float) -> ComplexField:
    """Unit-amplitude plane wave exp(j 2 pi (fx x + fy y)) on exact grid bins.

    fx and fy must coincide with frequency bins of the unpadded window; this
    keeps the wave an exact eigenvector of the circular propagation pipeline.
    """
    kx = _bin_index(fx, grid, "fx")
    ky = _bin_index(fy, grid, "fy")
    df = 1.0 / (grid.n * grid.dx)
    x = grid.coords()
    phase = 2.0 * np.pi * (kx * df * x[:, None] + ky * df * x[None, :])
    return ComplexField(grid, np.exp(1j * phase))


def _bin_index(f: float, grid: Grid, name: str) -> int:
    k = f * grid.n * grid.dx
    ki = int(round(k))
    if abs(k - ki) > 1e-9 * max(1.0, abs(k)):
        raise ValueError(f"{name}={f} is not an exact frequency bin of the grid")
    lo, hi = -grid.center, grid.n - 1 - grid.center
    if not lo <= ki <= hi:
        raise ValueError(f"{name}={f} falls outside the representable bins [{lo},{hi}]")
    return ki


def point_source(grid: Grid, i: int, j: int) -> ComplexField:
    """Unit-amplitude delta at pixel (i, j), zero elsewhere."""
    if not (0 <= i < grid.n and 0 <= j < grid.n):
        raise IndexError(f"source index ({i},{j}) out of range for n={grid.n}")
    values = np.zeros((grid.n, grid.n), dtype=np.complex128)
    values[i, j] = 1.0
    return ComplexField(grid, values)


def energy(f: ComplexField) -> float:
    """Total power sum |U|^2 dx^2 in dimensionless * m^2."""
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.dx**2)


def embed_center(values: np.ndarray, m: int) -> np.ndarray:
    """Zero-embed the trailing (n, n) axes into an (m, m) window, centers aligned."""
    n = values.shape[-1]
    if m < n:
        raise ValueError(f"window {m} smaller than field {n}")
    start = m // 2 - n // 2
    out = np.zeros(values.shape[:-2] + (m, m), dtype=values.dtype)
    out[..., start : start + n, start : start + n] = values
    return out


def extract_center(values: np.ndarray, n_out: int) -> np.ndarray:
    """Take the central (n_out, n_out) block of the trailing axes; inverse of embed_center."""
    n = values.shape[-1]
    if n_out > n:
        raise ValueError(f"cannot crop {n}x{n} field to {n_out}x{n_out}")
    start = n // 2 - n_out // 2
    return values[..., start : start + n_out, start : start + n_out].copy()


def pad(f: ComplexField, w: int) -> ComplexField:
    """Embed the field in a (w n) x (w n) zero window; energy is preserved exactly."""
    if int(w) != w or w < 1:
        raise ValueError(f"pad factor must be an integer >= 1, got {w!r}")
    g = f.grid
    if w == 1:
        return f
    return ComplexField(Grid(g.n * int(w), g.dx, g.wavelength), embed_center(f.values, g.n * int(w)))


def crop(f: ComplexField, n_out: int) -> ComplexField:
    """Central n_out x n_out block, aligned so crop(pad(f, w), n) == f bit-exactly."""
    if n_out > f.grid.n:
        raise ValueError(f"cannot crop {f.grid.n} to {n_out}")
    g = f.grid
    if n_out == g.n:
        return f
    return ComplexField(Grid(n_out, g.dx, g.wavelength), extract_center(f.values, n_out))


def dft2(values: np.ndarray) -> np.ndarray:
    """Forward 2D DFT over the trailing two axes, unscaled."""
    return np.fft.fft2(values, axes=(-2, -1))


def idft2(values: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT over the trailing two axes, scaled by 1/m^2."""
    return np.fft.ifft2(values, axes=(-2, -1))


def write_field(path, f: ComplexField) -> None:
    """Serialize to the WFLD binary format (little-endian).

    Layout: magic "WFLD", u32 n, f64 dx, f64 wavelength, then n*n (real, imag)
    f64 pairs in row-major order.
    """
    header = struct.pack("<4sIdd", WFLD_MAGIC, f.grid.n, f.grid.dx, f.grid.wavelength)
    interleaved = np.empty((f.grid.n, f.grid.n, 2), dtype="<f8")
    interleaved[..., 0] = f.values.real
    interleaved[..., 1] = f.values.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def read_field(path) -> ComplexField:
    """Load a field written by write_field."""
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIdd"))
        if len(header) < struct.calcsize("<4sIdd"):
            raise ValueError(f"{path}: truncated WFLD header")
        magic, n, dx, wavelength = struct.unpack("<4sIdd", header)
        if magic != WFLD_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 * n * n:
        raise ValueError(f"{path}: expected {2 * n * n} samples, found {raw.size}")
    pairs = raw.reshape(n, n, 2)
    return ComplexField(Grid(int(n), dx, wavelength), pairs[..., 0] + 1j * pairs[..., 1])
