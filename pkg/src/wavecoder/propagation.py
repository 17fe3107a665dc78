"""Free-space scalar diffraction.

Two routes are provided: a direct Riemann summation of the first
Rayleigh-Sommerfeld solution (exact but O(N^4), kept as an oracle and guarded
by a size limit) and the FFT-based angular-spectrum pipeline
(pad -> shift -> DFT -> transfer x evanescent mask -> IDFT -> unshift -> crop)
used by every model forward pass.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .field import (
    ComplexField,
    FrequencyGrid,
    Grid,
    dft2,
    embed_center,
    extract_center,
    idft2,
    point_source,
)

# The direct method's working set grows like N^4; above this it is no longer
# an oracle, it is a mistake.
DIRECT_SIZE_LIMIT = 64

DEFAULT_PAD_FACTOR = 4


class Method(enum.Enum):
    DIRECT = "direct"
    ANGULAR_SPECTRUM = "as"


@dataclass(frozen=True)
class PropagationSegment:
    """One free-space leg of an optical stack.

    pad_factor is the computational-window multiplier w used by the
    angular-spectrum route; the direct route ignores it.
    """

    distance: float
    method: Method = Method.ANGULAR_SPECTRUM
    pad_factor: int = DEFAULT_PAD_FACTOR

    def __post_init__(self):
        if not np.isfinite(self.distance) or self.distance < 0:
            raise ValueError(f"propagation distance must be positive, got {self.distance!r}")
        if self.method is Method.DIRECT and self.distance == 0:
            # the direct kernel has a 1/r singularity at zero separation
            raise ValueError("direct propagation requires a strictly positive distance")
        if self.pad_factor < 1:
            raise ValueError(f"pad factor must be >= 1, got {self.pad_factor}")


@dataclass(frozen=True)
class TransferFunction:
    """Frequency response of a free-space leg on a centered frequency grid.

    Propagating bins carry unit modulus, evanescent bins are zeroed outright,
    so |values| is exactly 0 or 1 everywhere.
    """

    freq_grid: FrequencyGrid
    values: np.ndarray

    def fft_order(self) -> np.ndarray:
        """Values reordered to match an unshifted DFT spectrum."""
        return np.fft.ifftshift(self.values)


def rs_weight(dx_m: float, dy_m: float, dz: float, wavelength: float) -> complex:
    """Rayleigh-Sommerfeld kernel weight between two points offset by (dx_m, dy_m, dz).

    w = (dz / r^2) (1/(2 pi r) + 1/(j lambda)) exp(j 2 pi r / lambda),
    r = sqrt(dx_m^2 + dy_m^2 + dz^2).
    """
    if dz <= 0:
        raise ValueError(f"axial separation must be > 0, got {dz!r}")
    r = np.sqrt(dx_m * dx_m + dy_m * dy_m + dz * dz)
    obliquity = dz / (r * r)
    amplitude = 1.0 / (2.0 * np.pi * r) + 1.0 / (1j * wavelength)
    return complex(obliquity * amplitude * np.exp(2j * np.pi * r / wavelength))


def rs_kernel(grid: Grid, dz: float) -> np.ndarray:
    """Table of kernel weights for every index offset, shape (2n-1, 2n-1).

    Entry [di + n - 1, dj + n - 1] equals rs_weight(di*dx, dj*dx, dz, lambda),
    vectorized; see rs_weight for the per-entry formula.
    """
    offsets = (np.arange(2 * grid.n - 1) - (grid.n - 1)) * grid.dx
    r = np.sqrt(offsets[:, None] ** 2 + offsets[None, :] ** 2 + dz * dz)
    amplitude = 1.0 / (2.0 * np.pi * r) + 1.0 / (1j * grid.wavelength)
    return (dz / (r * r)) * amplitude * np.exp(2j * np.pi * r / grid.wavelength)


def propagate_direct(f: ComplexField, segment: PropagationSegment) -> ComplexField:
    """Riemann summation of the diffraction integral onto the same grid.

    out[i1, j1] = sum_{i0, j0} U[i0, j0] w(i1 - i0, j1 - j0) dx dy.
    O(N^4) work; guarded so it stays a small-scale oracle.
    """
    if segment.method is not Method.DIRECT:
        raise ValueError("propagate_direct requires a Direct segment")
    n = f.grid.n
    if n > DIRECT_SIZE_LIMIT:
        raise ValueError(
            f"direct method limited to n <= {DIRECT_SIZE_LIMIT} (requested {n}); use the angular-spectrum route"
        )
    kernel = rs_kernel(f.grid, segment.distance) * f.grid.dx**2
    u = f.values
    out = np.empty_like(u)
    # K[i1 - i0 + n - 1] over i0 = 0..n-1 is the reversed slice K[i1 : i1 + n].
    for i1 in range(n):
        ksub = kernel[i1 : i1 + n][::-1]
        for j1 in range(n):
            out[i1, j1] = np.sum(u * ksub[:, j1 : j1 + n][:, ::-1])
    return f.with_values(out)


def as_transfer(freq_grid: FrequencyGrid, z: float, wavelength: float) -> TransferFunction:
    """Angular-spectrum transfer function with the evanescent mask applied.

    Propagating bins (fx^2 + fy^2 <= 1/lambda^2) get
    exp(j 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2)); the rest are zeroed.
    """
    if z < 0:
        raise ValueError(f"propagation distance must be >= 0, got {z!r}")
    f = freq_grid.freqs()
    f2 = f[:, None] ** 2 + f[None, :] ** 2
    radicand = 1.0 / wavelength**2 - f2
    propagating = radicand >= 0.0
    kz = np.sqrt(np.where(propagating, radicand, 0.0))
    values = np.where(propagating, np.exp(2j * np.pi * z * kz), 0.0 + 0.0j)
    return TransferFunction(freq_grid, values)


def segment_transfer(grid: Grid, segment: PropagationSegment) -> TransferFunction:
    freq_grid = FrequencyGrid.for_window(grid, segment.pad_factor)
    return as_transfer(freq_grid, segment.distance, grid.wavelength)


def as_apply(values: np.ndarray, transfer_fft: np.ndarray, n_out: int) -> np.ndarray:
    """Run the angular-spectrum pipeline on the trailing two axes.

    values may carry leading batch axes; transfer_fft is the transfer function
    in unshifted DFT order on the padded window.
    """
    m = transfer_fft.shape[-1]
    padded = embed_center(values, m)
    spectrum = dft2(np.fft.ifftshift(padded, axes=(-2, -1)))
    out = np.fft.fftshift(idft2(spectrum * transfer_fft), axes=(-2, -1))
    return extract_center(out, n_out)


def as_apply_adjoint(values: np.ndarray, transfer_fft: np.ndarray, n_out: int) -> np.ndarray:
    """Adjoint of as_apply: the same pipeline with the conjugate transfer."""
    return as_apply(values, np.conj(transfer_fft), n_out)


def propagate_as(f: ComplexField, segment: PropagationSegment) -> ComplexField:
    """Angular-spectrum propagation over one segment, output on the input grid."""
    if segment.method is not Method.ANGULAR_SPECTRUM:
        raise ValueError("propagate_as requires an AngularSpectrum segment")
    transfer = segment_transfer(f.grid, segment)
    return f.with_values(as_apply(f.values, transfer.fft_order(), f.grid.n))


def propagate(f: ComplexField, segment: PropagationSegment) -> ComplexField:
    if segment.method is Method.DIRECT:
        return propagate_direct(f, segment)
    return propagate_as(f, segment)


def compute_psf(system, source: tuple[int, int]) -> np.ndarray:
    """Intensity response of an optical stack to a unit point source.

    system must expose grid, propagate_field(ComplexField) and a
    has_trainable_decoder() predicate (see models.Model); the result is
    normalized to unit sum.
    """
    if system.has_trainable_decoder():
        raise ValueError("PSF extraction requires a decoder-free optical stack")
    i, j = source
    out = system.propagate_field(point_source(system.grid, i, j))
    psf = np.abs(out.values) ** 2
    total = psf.sum()
    if total <= 0:
        raise ValueError("optical stack extinguished the point source; PSF undefined")
    return psf / total


def sense_psf_convolution(image: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Circular 2D convolution of a non-negative image with a PSF.

    Valid as a sensing model only while the PSF support stays well inside the
    window; wrap-around is the caller's responsibility. Preserves
    sum(out) = sum(image) * sum(psf) up to roundoff.
    """
    image = np.asarray(image, dtype=np.float64)
    psf = np.asarray(psf, dtype=np.float64)
    if image.shape != psf.shape:
        raise ValueError(f"image {image.shape} and psf {psf.shape} shapes differ")
    if np.any(image < 0):
        raise ValueError("image must be non-negative")
    # The PSF is indexed by centered displacement, so align its origin first.
    out = idft2(dft2(image) * dft2(np.fft.ifftshift(psf))).real
    return np.maximum(out, 0.0)


def direct_workset_elements(n: int) -> int:
    """Working-set element count of the direct method (one weight per pixel pair)."""
    return n**4


def as_workset_elements(n: int, pad_factor: int) -> int:
    """Working-set element count of the angular-spectrum method, (w n)^2."""
    return (pad_factor * n) ** 2


def bench_propagation(n: int, pad_factor: int, repetitions: int = 3, rng=None):
    """Measure wall time per propagation for both routes at size n.

    Returns a dict with timings in seconds (direct entry only when n is within
    the guard) and the analytic working-set accounting.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = Grid(n, 1.0e-6, 1.0e-6)
    u = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    f = ComplexField(grid, u)
    z = 20 * grid.wavelength
    report = {
        "n": n,
        "pad_factor": pad_factor,
        "direct_elements": direct_workset_elements(n),
        "as_elements": as_workset_elements(n, pad_factor),
        "ratio": direct_workset_elements(n) / as_workset_elements(n, pad_factor),
    }
    seg_as = PropagationSegment(z, Method.ANGULAR_SPECTRUM, pad_factor)
    best = np.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        propagate_as(f, seg_as)
        best = min(best, time.perf_counter() - t0)
    report["as_seconds"] = best
    if n <= DIRECT_SIZE_LIMIT:
        seg_d = PropagationSegment(z, Method.DIRECT)
        best = np.inf
        for _ in range(repetitions):
            t0 = time.perf_counter()
            propagate_direct(f, seg_d)
            best = min(best, time.perf_counter() - t0)
        report["direct_seconds"] = best
    return report
