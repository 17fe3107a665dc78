"""Coded-aperture regularizers, decoder weight penalties, and the exponential
penalty-weight schedule.

Every regularizer accepts either plain numpy arrays or autodiff Variables;
the same expression is recorded on the tape during training and evaluated
directly in tests and reports. Inputs are the soft (physical) coefficient
values in [0, 1], never raw logits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Variable


class RegKind(enum.Enum):
    NONE = "none"
    BINARY = "binary"
    BINARY_CORRELATION = "binary_correlation"
    BINARY_TRANSMITTANCE = "binary_transmittance"
    BINARY_SHOTS = "binary_shots"


@dataclass(frozen=True)
class RegularizerConfig:
    """Configuration of the optics penalty rho * R(phi) + sigma * R(theta).

    The composed kinds add the companion term (correlation, transmittance,
    shot count) to the binary term with weight companion_weight relative to
    the shared rho schedule.
    """

    kind: RegKind = RegKind.NONE
    rho0: float = 0.0
    growth: float = 1.0
    rho_max: float = 1e-2
    target_transmittance: float | None = None
    shot_count: int | None = None
    companion_weight: float = 1.0
    sigma: float = 0.0
    decoder_norm: str = "L2"

    def __post_init__(self):
        if self.rho0 < 0:
            raise ValueError(f"rho0 must be >= 0, got {self.rho0}")
        if self.growth < 1:
            raise ValueError(f"growth must be >= 1, got {self.growth}")
        if self.kind is RegKind.BINARY_TRANSMITTANCE:
            if self.target_transmittance is None:
                raise ValueError("target_transmittance required for the transmittance kind")
            if not 0.0 <= self.target_transmittance <= 1.0:
                raise ValueError("target transmittance must lie in [0, 1]")
        if self.kind in (RegKind.BINARY_CORRELATION, RegKind.BINARY_SHOTS):
            if self.shot_count is None or self.shot_count < 1:
                raise ValueError("shot_count >= 1 required for multi-shot kinds")
            if self.kind is RegKind.BINARY_CORRELATION and self.shot_count < 2:
                raise ValueError("correlation needs at least 2 shots")
        if self.decoder_norm not in ("L1", "L2"):
            raise ValueError(f"decoder_norm must be L1 or L2, got {self.decoder_norm!r}")


def _is_var(x) -> bool:
    return isinstance(x, Variable)


def _mean(x):
    return ad.vmean(x) if _is_var(x) else float(np.mean(x))


def _sum(x):
    return ad.vsum(x) if _is_var(x) else float(np.sum(x))


def _sqrt(x):
    return ad.sqrt(x) if _is_var(x) else float(np.sqrt(x))


def _abs(x):
    return ad.vabs(x) if _is_var(x) else np.abs(x)


def _coerce(x):
    return x if _is_var(x) else np.asarray(x, dtype=np.float64)


def reg_binary(phi):
    """Quartic binariness penalty mean(phi^2 (phi - 1)^2); zero iff phi is {0,1}-valued."""
    phi = _coerce(phi)
    return _mean(phi * phi * (phi - 1.0) * (phi - 1.0))


def reg_correlation(phis):
    """Mean over positions of the product across shots, mean_l(prod_j phi_l^j).

    Small when the masks' supports overlap little; needs at least two shots
    of equal length.
    """
    if len(phis) < 2:
        raise ValueError("correlation regularizer needs at least 2 masks")
    sizes = {int(np.prod(np.shape(_raw(p)))) for p in phis}
    if len(sizes) != 1:
        raise ValueError("all masks must have the same number of entries")
    phis = [_coerce(p) for p in phis]
    prod = phis[0]
    for p in phis[1:]:
        prod = prod * p
    return _mean(prod)


def reg_transmittance(phi, target: float):
    """Squared deviation of the mean transmittance from the target level."""
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target transmittance must lie in [0, 1], got {target!r}")
    phi = _coerce(phi)
    return (_mean(phi) - target) ** 2


def reg_shots(phis):
    """l2,1 shot penalty sum_j ||phi^j||_2; drives whole shots toward zero."""
    total = None
    for p in phis:
        p = _coerce(p)
        norm = _sqrt(_sum(p * p))
        total = norm if total is None else total + norm
    if total is None:
        raise ValueError("at least one shot required")
    return total


def reg_decoder_weights(theta, norm: str = "L2"):
    """L2 (root of sum of squares) or L1 (sum of magnitudes) weight penalty."""
    theta = _coerce(theta)
    if norm == "L2":
        return _sqrt(_sum(theta * theta))
    if norm == "L1":
        return _sum(_abs(theta))
    raise ValueError(f"unknown norm {norm!r}")


def rho_schedule(epoch: int, config: RegularizerConfig) -> float:
    """Exponentially increasing penalty weight rho0 * growth^epoch, capped."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return float(min(config.rho0 * config.growth**epoch, config.rho_max))


def evaluate_penalty(config: RegularizerConfig, masks):
    """Unweighted R(phi) for the configured kind over the soft mask realizations.

    The composed Table-of-kinds entries add reg_binary of every mask to the
    companion term; NONE evaluates to 0.
    """
    if config.kind is RegKind.NONE:
        return 0.0
    masks = list(masks)
    if not masks:
        raise ValueError("regularizer configured but the model has no coded apertures")
    binary_term = None
    for m in masks:
        t = reg_binary(m)
        binary_term = t if binary_term is None else binary_term + t
    if config.kind is RegKind.BINARY:
        return binary_term
    if config.kind is RegKind.BINARY_TRANSMITTANCE:
        companion = None
        for m in masks:
            t = reg_transmittance(m, config.target_transmittance)
            companion = t if companion is None else companion + t
    elif config.kind is RegKind.BINARY_CORRELATION:
        _check_shots(config, masks)
        companion = reg_correlation(masks)
    else:  # BINARY_SHOTS
        _check_shots(config, masks)
        companion = reg_shots(masks)
    return binary_term + config.companion_weight * companion


def _check_shots(config: RegularizerConfig, masks) -> None:
    if config.shot_count != len(masks):
        raise ValueError(
            f"config expects {config.shot_count} shots, model has {len(masks)} coded apertures"
        )


def _raw(x):
    return x.value if _is_var(x) else x
