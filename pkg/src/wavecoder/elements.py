"""Trainable parametrizations of coding elements and their realization into
per-pixel transmission coefficients: raw phase masks, Zernike-parametrized
phase plates, sigmoid/thresholded binary apertures, and softmax filter
selectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .field import ComplexField, Grid

# Highest supported Noll index (radial orders up to 10).
MAX_NOLL = 66


def noll_to_nm(j: int) -> tuple[int, int]:
    """Map a 1-based Noll index to radial order n and azimuthal frequency m."""
    if j < 1:
        raise ValueError(f"Noll indices start at 1, got {j}")
    n = 0
    remainder = j - 1
    while remainder > n:
        n += 1
        remainder -= n
    m = (-1) ** j * ((n % 2) + 2 * ((remainder + ((n + 1) % 2)) // 2))
    return n, m


def _radial_poly(n: int, m_abs: int, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in range((n - m_abs) // 2 + 1):
        coef = (
            (-1) ** k
            * math.factorial(n - k)
            / (math.factorial(k) * math.factorial((n + m_abs) // 2 - k) * math.factorial((n - m_abs) // 2 - k))
        )
        out += coef * rho ** (n - 2 * k)
    return out


def zernike_map(j: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Noll-normalized Zernike polynomial j evaluated at unit-disk coordinates."""
    n, m = noll_to_nm(j)
    rho = np.sqrt(x * x + y * y)
    theta = np.arctan2(y, x)
    radial = _radial_poly(n, abs(m), rho)
    if m == 0:
        return math.sqrt(n + 1.0) * radial
    norm = math.sqrt(2.0 * (n + 1.0))
    azimuthal = np.cos(abs(m) * theta) if m > 0 else np.sin(abs(m) * theta)
    return norm * radial * azimuthal


def unit_disk_coords(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid coordinates scaled to the inscribed unit disk, plus the disk mask."""
    radius = grid.center * grid.dx
    x = grid.coords() / radius
    xx = np.broadcast_to(x[:, None], (grid.n, grid.n))
    yy = np.broadcast_to(x[None, :], (grid.n, grid.n))
    return xx, yy, xx * xx + yy * yy <= 1.0


def zernike_basis(grid: Grid, count: int) -> np.ndarray:
    """Stack of the first `count` Noll polynomials on the grid, zero off-disk."""
    if count < 1:
        raise ValueError(f"need at least one basis map, got {count}")
    if count > MAX_NOLL:
        raise ValueError(f"basis_count {count} exceeds implemented Noll indices (max {MAX_NOLL})")
    xx, yy, disk = unit_disk_coords(grid)
    basis = np.stack([zernike_map(j, xx, yy) for j in range(1, count + 1)])
    basis[:, ~disk] = 0.0
    return basis


@dataclass
class PhaseMask:
    """Free-form phase element phi = amplitude * exp(j psi); psi is trainable."""

    psi: np.ndarray
    amplitude: np.ndarray | None = None

    def __post_init__(self):
        self.psi = np.array(self.psi, dtype=np.float64)
        if self.amplitude is None:
            self.amplitude = np.ones_like(self.psi)
        else:
            self.amplitude = np.array(self.amplitude, dtype=np.float64)
            if self.amplitude.shape != self.psi.shape:
                raise ValueError("amplitude and psi shapes differ")
            if np.any(self.amplitude < 0) or np.any(self.amplitude > 1):
                raise ValueError("amplitude must lie in [0, 1]")

    def params(self) -> dict:
        return {"psi": self.psi}

    def realize(self, grid=None) -> np.ndarray:
        return realize_phase(self)

    def realize_var(self, tape, pvars, grid=None) -> ad.Variable:
        phi = ad.cexp(pvars["psi"])
        if np.any(self.amplitude != 1.0):
            phi = ad.mul(phi, self.amplitude)
        return phi


def realize_phase(mask: PhaseMask) -> np.ndarray:
    """Transmission coefficients amplitude * exp(j psi)."""
    return mask.amplitude * np.exp(1j * mask.psi)


@dataclass
class ZernikeDOE:
    """Phase plate whose surface height is a Zernike expansion.

    coeffs are meters of sag per Noll polynomial; the height map turns into
    phase via the thin-element rule 2 pi delta_n h / lambda. Outside the
    inscribed disk the amplitude drops to aperture_outside (opaque by
    default).
    """

    coeffs: np.ndarray
    basis_count: int = 0
    refractive_index_delta: float = 0.5
    aperture_outside: float = 0.0

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if self.basis_count == 0:
            self.basis_count = self.coeffs.size
        if self.basis_count != self.coeffs.size:
            raise ValueError(
                f"basis_count {self.basis_count} does not match {self.coeffs.size} coefficients"
            )
        if self.basis_count > MAX_NOLL:
            raise ValueError(f"basis_count {self.basis_count} exceeds implemented Noll indices")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    def params(self) -> dict:
        return {"coeffs": self.coeffs}

    def _aperture(self, grid: Grid) -> np.ndarray:
        _, _, disk = unit_disk_coords(grid)
        return np.where(disk, 1.0, self.aperture_outside)

    def phase_scale(self, wavelength: float) -> float:
        return 2.0 * np.pi * self.refractive_index_delta / wavelength

    def realize(self, grid: Grid, wavelength: float | None = None) -> np.ndarray:
        return realize_zernike(self, grid, wavelength or grid.wavelength)

    def realize_var(self, tape, pvars, grid: Grid) -> ad.Variable:
        basis = zernike_basis(grid, self.basis_count)
        height = ad.basis_combination(pvars["coeffs"], basis)
        phi = ad.cexp(ad.mul(height, self.phase_scale(grid.wavelength)))
        return ad.mul(phi, self._aperture(grid))


def realize_zernike(doe: ZernikeDOE, grid: Grid, wavelength: float) -> np.ndarray:
    """Realize the DOE at a wavelength: exp(j 2 pi delta_n h / lambda) on the disk."""
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength!r}")
    basis = zernike_basis(grid, doe.basis_count)
    height = np.tensordot(doe.coeffs, basis, axes=1)
    scale = 2.0 * np.pi * doe.refractive_index_delta / wavelength
    return doe._aperture(grid) * np.exp(1j * scale * height)


@dataclass
class BinaryMask:
    """Coded aperture parametrized by unconstrained logits.

    The soft realization sigmoid(logits) lives strictly in (0, 1) and is what
    training and regularizers see; the hard realization thresholds at logit 0
    and back-propagates through the straight-through identity.
    """

    logits: np.ndarray
    hard: bool = False

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)

    def params(self) -> dict:
        return {"logits": self.logits}

    def realize(self, grid=None) -> np.ndarray:
        return realize_binary_hard(self) if self.hard else realize_binary_soft(self)

    def realize_var(self, tape, pvars, grid=None) -> ad.Variable:
        if self.hard:
            return ad.hard_threshold_st(pvars["logits"])
        return ad.sigmoid(pvars["logits"])

    def soft_var(self, tape, pvars) -> ad.Variable:
        """Soft realization regardless of deployment mode (regularizer input)."""
        return ad.sigmoid(pvars["logits"])


def realize_binary_soft(mask: BinaryMask) -> np.ndarray:
    """Sigmoid of the logits, elementwise in the open interval (0, 1).

    Saturated values are nudged off the exact endpoints so the open-interval
    guarantee survives float64 rounding.
    """
    x = mask.logits
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))


def realize_binary_hard(mask: BinaryMask) -> np.ndarray:
    """Threshold at logit 0; ties go to 1. Gradient handling lives in the tape op."""
    return (mask.logits >= 0).astype(np.float64)


@dataclass
class SelectorMask:
    """Per-pixel filter selector: softmax over trainable scores picks a convex
    combination of the filter bank's spectral responses."""

    weights: np.ndarray
    filter_bank: np.ndarray
    wavelength_index: int = 0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.filter_bank = np.array(self.filter_bank, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ValueError("weights must be (n, n, filters)")
        if self.filter_bank.ndim != 2 or self.filter_bank.shape[0] != self.weights.shape[-1]:
            raise ValueError("filter_bank must be (filters, wavelength samples)")

    def params(self) -> dict:
        return {"weights": self.weights}

    def realize(self, grid=None, temperature: float = 1.0) -> np.ndarray:
        # Amplitude response at the configured wavelength sample.
        return realize_selector(self, temperature)[..., self.wavelength_index]

    def realize_var(self, tape, pvars, grid=None, temperature: float = 1.0) -> ad.Variable:
        smax = ad.softmax(ad.mul(pvars["weights"], 1.0 / temperature), axis=-1)
        return ad.dot_last(smax, self.filter_bank[:, self.wavelength_index])


def realize_selector(mask: SelectorMask, temperature: float = 1.0) -> np.ndarray:
    """Per-pixel spectral response, shape (n, n, wavelength samples)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature!r}")
    scaled = mask.weights / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    smax = e / e.sum(axis=-1, keepdims=True)
    return smax @ mask.filter_bank


def modulate(f: ComplexField, phi: np.ndarray) -> ComplexField:
    """Apply transmission coefficients pixelwise: out = U o phi."""
    phi = np.asarray(phi)
    if phi.shape != f.values.shape:
        raise ValueError(f"mask shape {phi.shape} does not match field {f.values.shape}")
    return f.with_values(f.values * phi)


def write_pgm(path, data: np.ndarray) -> None:
    """8-bit binary PGM (P5) writer."""
    data = np.asarray(data, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def phase_to_pgm(path, phi: np.ndarray) -> None:
    """Export the phase of complex coefficients, wrapped to [0, 2 pi) -> 0..255."""
    wrapped = np.mod(np.angle(phi), 2.0 * np.pi)
    levels = np.clip(np.floor(wrapped / (2.0 * np.pi) * 256.0), 0, 255)
    write_pgm(path, levels)


def binary_to_pgm(path, mask01: np.ndarray) -> None:
    """Export a {0,1} (or [0,1]) mask with full contrast."""
    write_pgm(path, np.clip(np.round(np.asarray(mask01) * 255.0), 0, 255))
