"""Composition of propagation legs, coded elements and detection into a
trainable optical system, plus the task losses, the training objectives, and
the small-scale linear-system materialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Variable
from .elements import BinaryMask
from .field import ComplexField, Grid, point_source
from .propagation import Method, PropagationSegment, propagate, segment_transfer
from .regularizers import (
    RegKind,
    RegularizerConfig,
    evaluate_penalty,
    reg_decoder_weights,
    rho_schedule,
)

SENSING_MATRIX_LIMIT = 16


@dataclass(frozen=True)
class DetectorRegions:
    """Classification readout: total intensity inside disjoint rectangles."""

    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(tuple(int(v) for v in r) for r in self.regions))


@dataclass(frozen=True)
class IntensityImage:
    """Raw detector image readout."""


@dataclass
class LinearDecoder:
    """Trainable linear readout theta applied to the vectorized intensity."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ValueError("decoder weights must be a matrix (outputs, n*n)")


def default_detector_regions(n: int, classes: int = 10) -> DetectorRegions:
    """Equal square regions on a centered row-major layout (2 x 5 for 10 classes)."""
    rows = 1 if classes <= 3 else 2
    cols = math.ceil(classes / rows)
    spacing = n / (cols + 1)
    vspacing = n / (rows + 1)
    size = max(1, min(int(round(0.1 * n)), int(spacing // 2), int(vspacing // 2)))
    regions = []
    for k in range(classes):
        i, j = divmod(k, cols)
        rc = int(round((i + 1) * vspacing))
        cc = int(round((j + 1) * spacing))
        regions.append((rc - size // 2, cc - size // 2, size, size))
    return DetectorRegions(tuple(regions))


@dataclass
class Model:
    """An ordered optical stack ending in an intensity detector.

    layers pairs each coded element with the propagation segment that follows
    it (None when the element sits directly against the next plane); the
    input and output legs are given as plain distances and skipped when zero.
    """

    grid: Grid
    input_distance: float
    layers: list
    output_distance: float
    readout: object
    input_encoding: str = "amplitude"
    pad_factor: int = 4
    task: str = "auto"
    # Region power captured from a unit-power input is O(area/n^2); this
    # factor lifts the sums into a usable logit range for the softmax loss.
    score_scale: float = 1.0

    _transfer_cache: dict = dc_field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_distance < 0 or self.output_distance < 0:
            raise ValueError("leg distances must be >= 0")
        if self.input_encoding not in ("amplitude", "phase"):
            raise ValueError(f"unknown input encoding {self.input_encoding!r}")
        if isinstance(self.readout, DetectorRegions):
            self._validate_regions(self.readout.regions)
        if isinstance(self.readout, LinearDecoder):
            if self.readout.theta.shape[1] != self.grid.n**2:
                raise ValueError(
                    f"decoder expects {self.readout.theta.shape[1]} inputs, "
                    f"detector provides {self.grid.n ** 2}"
                )

    def _validate_regions(self, regions) -> None:
        n = self.grid.n
        occupancy = np.zeros((n, n), dtype=bool)
        for r, c, h, w in regions:
            if r < 0 or c < 0 or r + h > n or c + w > n or h < 1 or w < 1:
                raise ValueError(f"detector region {(r, c, h, w)} outside the {n}x{n} grid")
            block = occupancy[r : r + h, c : c + w]
            if block.any():
                raise ValueError("detector regions overlap")
            block[:] = True

    # -- parameters ---------------------------------------------------------

    def params(self) -> dict:
        """Live references to every trainable array, keyed by a stable name."""
        out = {}
        for i, (element, _) in enumerate(self.layers):
            for key, arr in element.params().items():
                out[f"layer{i}.{key}"] = arr
        if isinstance(self.readout, LinearDecoder):
            out["decoder.theta"] = self.readout.theta
        return out

    def make_param_vars(self, tape: Tape, requires_grad: bool = True) -> dict:
        return {
            name: tape.variable(arr, requires_grad=requires_grad)
            for name, arr in self.params().items()
        }

    def has_trainable_decoder(self) -> bool:
        return isinstance(self.readout, LinearDecoder)

    def binary_soft_masks(self, tape: Tape, pvars: dict) -> list:
        """Soft realizations of every coded aperture, for the regularizers."""
        masks = []
        for i, (element, _) in enumerate(self.layers):
            if isinstance(element, BinaryMask):
                masks.append(element.soft_var(tape, _element_vars(pvars, i)))
        return masks

    # -- propagation plumbing ------------------------------------------------

    def _transfer_fft(self, distance: float, pad_factor: int):
        key = (distance, pad_factor)
        cached = self._transfer_cache.get(key)
        if cached is None:
            segment = PropagationSegment(distance, Method.ANGULAR_SPECTRUM, pad_factor)
            cached = segment_transfer(self.grid, segment).fft_order()
            self._transfer_cache[key] = cached
        return cached

    def _legs(self):
        """Yield ('prop', (distance, pad)) and ('mod', layer_index) steps in order.

        The input and output legs use the model-level pad factor; a layer's
        own segment keeps the factor it was built with.
        """
        if self.input_distance > 0:
            yield ("prop", (self.input_distance, self.pad_factor))
        for i, (_, segment) in enumerate(self.layers):
            yield ("mod", i)
            if segment is not None:
                yield ("prop", (segment.distance, segment.pad_factor))
        if self.output_distance > 0:
            yield ("prop", (self.output_distance, self.pad_factor))

    def encode_input(self, images: np.ndarray) -> np.ndarray:
        """Map non-negative images to input fields (sqrt amplitude by default)."""
        images = np.asarray(images, dtype=np.float64)
        if np.any(images < 0):
            raise ValueError("input images must be non-negative")
        if self.input_encoding == "amplitude":
            return np.sqrt(images).astype(np.complex128)
        return np.exp(1j * np.pi * images)

    # -- forward passes -------------------------------------------------------

    def forward_batch(self, tape: Tape, images: np.ndarray, pvars: dict) -> Variable:
        """Differentiable forward pass over a (batch, n, n) image stack."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        if images.shape[-2:] != (self.grid.n, self.grid.n):
            raise ValueError(f"image shape {images.shape[-2:]} does not match grid {self.grid.n}")
        u = tape.constant(self.encode_input(images))
        for kind, arg in self._legs():
            if kind == "prop":
                distance, pad = arg
                u = ad.propagate_variable(u, self._transfer_fft(distance, pad), self.grid.n)
            else:
                element, _ = self.layers[arg]
                phi = element.realize_var(tape, _element_vars(pvars, arg), self.grid)
                u = ad.mul(u, phi)
        intensity = ad.abs2(u)
        return self._readout_var(tape, intensity, pvars)

    def _readout_var(self, tape: Tape, intensity: Variable, pvars: dict) -> Variable:
        if isinstance(self.readout, DetectorRegions):
            sums = ad.region_sums(intensity, self.readout.regions)
            return sums if self.score_scale == 1.0 else ad.mul(sums, self.score_scale)
        if isinstance(self.readout, IntensityImage):
            return intensity
        flat = ad.reshape(intensity, (intensity.shape[0], self.grid.n**2))
        return ad.matmul(pvars["decoder.theta"], flat)

    def propagate_field(self, f: ComplexField) -> ComplexField:
        """Plain (non-recorded) pass of a field through the optical stack only."""
        if f.grid != self.grid:
            raise ValueError("field grid does not match the model grid")
        for kind, arg in self._legs():
            if kind == "prop":
                distance, pad = arg
                f = propagate(f, PropagationSegment(distance, Method.ANGULAR_SPECTRUM, pad))
            else:
                element, _ = self.layers[arg]
                f = f.with_values(f.values * element.realize(self.grid))
        return f


def _element_vars(pvars: dict, index: int) -> dict:
    prefix = f"layer{index}."
    return {name[len(prefix) :]: var for name, var in pvars.items() if name.startswith(prefix)}


def forward(model: Model, image: np.ndarray) -> np.ndarray:
    """Run one image through the model and return the readout as numpy."""
    tape = Tape()
    pvars = model.make_param_vars(tape, requires_grad=False)
    out = model.forward_batch(tape, np.asarray(image)[None], pvars)
    return np.asarray(out.value[0])


def sense_intensity(f: ComplexField) -> np.ndarray:
    """Detector transfer: photon flux |U|^2 per pixel."""
    return np.abs(f.values) ** 2


def loss_mse(pred, target):
    """Mean squared error; works on arrays or tape Variables."""
    if isinstance(pred, Variable):
        diff = pred - np.asarray(target, dtype=np.float64)
        return ad.vmean(diff * diff)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} shapes differ")
    return float(np.mean((pred - target) ** 2))


def loss_softmax_xent(scores, label: int) -> float:
    """Cross-entropy -log softmax(scores)[label] with log-sum-exp stabilization."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= label < scores.size:
        raise IndexError(f"label {label} out of range for {scores.size} classes")
    shifted = scores - scores.max()
    return float(np.log(np.sum(np.exp(shifted))) - shifted[label])


def _task_loss(task: str, output: Variable, targets) -> Variable:
    targets = np.asarray(targets)
    labeled = np.issubdtype(targets.dtype, np.integer)
    if task == "auto":
        task = "xent" if labeled else "mse"
    if task == "xent":
        return ad.softmax_xent_mean(output, targets)
    if task == "mse":
        if labeled:
            # MSE-trained classifier: the target pattern is one detector lit.
            onehot = np.zeros(output.shape, dtype=np.float64)
            onehot[np.arange(len(targets)), targets] = 1.0
            targets = onehot
        return loss_mse(output, targets)
    raise ValueError(f"unknown task {task!r}")


def objective_e2e(
    model: Model,
    batch,
    reg_config: RegularizerConfig,
    *,
    epoch: int = 0,
    task: str | None = None,
    tape: Tape | None = None,
    pvars: dict | None = None,
    decoder_theta=None,
) -> Variable:
    """Mean task loss plus rho * R(phi) plus sigma * R(theta), on the tape.

    decoder_theta may override the model's decoder weights (as a Variable);
    by default they are taken from pvars.
    """
    tape = tape if tape is not None else Tape()
    if pvars is None:
        pvars = model.make_param_vars(tape)
    images, targets = batch
    output = model.forward_batch(tape, images, pvars)
    loss = _task_loss(task or model.task, output, targets)

    rho = rho_schedule(epoch, reg_config)
    if rho > 0 and reg_config.kind is not RegKind.NONE:
        penalty = evaluate_penalty(reg_config, model.binary_soft_masks(tape, pvars))
        loss = loss + rho * penalty
    if reg_config.sigma > 0:
        theta = decoder_theta
        if theta is None:
            theta = pvars.get("decoder.theta")
        if theta is not None:
            loss = loss + reg_config.sigma * reg_decoder_weights(theta, reg_config.decoder_norm)
    return loss


def objective_d2nn(
    model: Model,
    batch,
    *,
    task: str | None = None,
    tape: Tape | None = None,
    pvars: dict | None = None,
) -> Variable:
    """All-optical objective: mean task loss with only optical parameters."""
    if model.has_trainable_decoder():
        raise ValueError("all-optical objective rejects models with a trainable decoder")
    return objective_e2e(
        model, batch, RegularizerConfig(RegKind.NONE), task=task, tape=tape, pvars=pvars
    )


def materialize_sensing_matrix(model: Model, n_small: int | None = None) -> np.ndarray:
    """Field-level sensing matrix H: column k is the stack's response to basis pixel k.

    Guarded to small grids; the matrix has (n^2)^2 entries. For amplitude-only
    stacks, |H f|^2 reproduces the pipeline's detector image on any input.
    """
    n = model.grid.n
    if n_small is not None and n_small != n:
        raise ValueError(f"requested size {n_small} does not match the model grid {n}")
    if n > SENSING_MATRIX_LIMIT:
        raise ValueError(
            f"sensing matrix materialization limited to n <= {SENSING_MATRIX_LIMIT}, got {n}"
        )
    cols = []
    for i in range(n):
        for j in range(n):
            response = model.propagate_field(point_source(model.grid, i, j))
            cols.append(response.values.reshape(-1))
    return np.stack(cols, axis=1)


def lift_transpose(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Map measurements back to the scene's dimensions through H^T."""
    g = np.asarray(g)
    n = math.isqrt(h.shape[1])
    lifted = h.T @ g.reshape(-1)
    return lifted.reshape(n, n)


def gradient_check_model(model: Model, batch, reg_config=None, h: float = 1e-6):
    """Finite-difference check of every trainable parameter of a model.

    Straight-through (hard binarized) parameter blocks are excluded from the
    headline error and reported separately.
    """
    reg_config = reg_config or RegularizerConfig(RegKind.NONE)
    params = {name: arr.copy() for name, arr in model.params().items()}
    exclude = {
        f"layer{i}.logits"
        for i, (element, _) in enumerate(model.layers)
        if isinstance(element, BinaryMask) and element.hard
    }

    def build_loss(tape, pvars):
        return objective_e2e(model, batch, reg_config, tape=tape, pvars=pvars)

    return ad.gradient_check(build_loss, params, h=h, exclude=exclude)
