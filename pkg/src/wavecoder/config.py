"""Plain-text experiment configuration: dotted key = value pairs, strict
schema validation (unknown keys are errors), and builders that turn a
validated config into a model and datasets."""

from __future__ import annotations

import numpy as np

from .datasets import load_idx_dataset, synthetic_glyphs
from .elements import BinaryMask, PhaseMask, SelectorMask, ZernikeDOE
from .field import Grid
from .model import (
    IntensityImage,
    LinearDecoder,
    Model,
    default_detector_regions,
)
from .propagation import PropagationSegment
from .regularizers import RegKind, RegularizerConfig


class ConfigError(ValueError):
    pass


def _str_choice(*choices):
    def convert(raw):
        if raw not in choices:
            raise ConfigError(f"expected one of {', '.join(choices)}, got {raw!r}")
        return raw

    return convert


def _int(raw):
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc


def _float(raw):
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc


def _path(raw):
    return raw


# key -> (converter, required, default); defaults make the resolved config total
SCHEMA = {
    "grid.n": (_int, True, None),
    "grid.dx": (_float, True, None),
    "grid.wavelength": (_float, True, None),
    "model.layers": (_int, True, None),
    "model.element": (_str_choice("phase", "zernike", "binary", "binary_hard", "selector"), False, "phase"),
    "model.d_in": (_float, True, None),
    "model.d_layer": (_float, False, 0.0),
    "model.d_out": (_float, True, None),
    "model.pad_factor": (_int, False, 4),
    "model.readout": (_str_choice("regions", "image", "linear"), False, "regions"),
    "model.classes": (_int, False, 10),
    "model.decoder_outputs": (_int, False, 0),
    "model.input_encoding": (_str_choice("amplitude", "phase"), False, "amplitude"),
    "model.score_scale": (_float, False, 1.0),
    "model.init_seed": (_int, False, 0),
    "model.zernike_count": (_int, False, 15),
    "model.zernike_delta_n": (_float, False, 0.5),
    "model.selector_filters": (_int, False, 3),
    "objective.task": (_str_choice("xent", "mse"), False, "xent"),
    "objective.regularizer": (
        _str_choice("none", "binary", "binary_correlation", "binary_transmittance", "binary_shots"),
        False,
        "none",
    ),
    "objective.rho0": (_float, False, 0.0),
    "objective.growth": (_float, False, 1.0),
    "objective.rho_max": (_float, False, 1e-2),
    "objective.transmittance": (_float, False, -1.0),
    "objective.shots": (_int, False, 0),
    "objective.companion_weight": (_float, False, 1.0),
    "objective.sigma": (_float, False, 0.0),
    "objective.decoder_norm": (_str_choice("L1", "L2"), False, "L2"),
    "train.epochs": (_int, True, None),
    "train.batch_size": (_int, False, 32),
    "train.learning_rate": (_float, False, 0.01),
    "train.seed": (_int, True, None),
    "dataset.kind": (_str_choice("synthetic", "idx"), True, None),
    "dataset.train_images": (_path, False, ""),
    "dataset.train_labels": (_path, False, ""),
    "dataset.test_images": (_path, False, ""),
    "dataset.test_labels": (_path, False, ""),
    "dataset.train_count": (_int, True, None),
    "dataset.test_count": (_int, True, None),
    "dataset.resize": (_int, False, 0),
    "dataset.normalize": (_str_choice("peak", "power"), False, "power"),
    "dataset.seed": (_int, False, 0),
    "dataset.classes": (_int, False, 10),
    "output.dir": (_path, False, ""),
}


class ExperimentConfig:
    """Validated, fully resolved configuration (every schema key has a value)."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def resolved_text(self) -> str:
        """Canonical dump; parsing it again yields an identical config."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        converter = SCHEMA[key][0]
        try:
            values[key] = converter(raw_value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    for key, (_, required, default) in SCHEMA.items():
        if key not in values:
            if required:
                raise ConfigError(f"missing required config key {key!r}")
            values[key] = default
    config = ExperimentConfig(values)
    _cross_validate(config)
    return config


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _cross_validate(cfg: ExperimentConfig) -> None:
    if cfg["grid.n"] < 2:
        raise ConfigError("grid.n must be at least 2")
    if cfg["grid.dx"] <= 0 or cfg["grid.wavelength"] <= 0:
        raise ConfigError("grid.dx and grid.wavelength must be positive")
    if cfg["model.layers"] < 0:
        raise ConfigError("model.layers must be >= 0")
    if cfg["model.layers"] > 1 and cfg["model.d_layer"] <= 0:
        raise ConfigError("model.d_layer must be positive with more than one layer")
    if cfg["model.readout"] == "linear" and cfg["model.decoder_outputs"] < 1:
        raise ConfigError("model.decoder_outputs must be set for the linear readout")
    if cfg["dataset.kind"] == "idx":
        for key in ("dataset.train_images", "dataset.train_labels", "dataset.test_images", "dataset.test_labels"):
            if not cfg[key]:
                raise ConfigError(f"{key} is required when dataset.kind = idx")
    if cfg["train.epochs"] < 1:
        raise ConfigError("train.epochs must be >= 1")
    if cfg["train.batch_size"] < 1:
        raise ConfigError("train.batch_size must be >= 1")
    reg = cfg["objective.regularizer"]
    if reg == "binary_transmittance" and not 0.0 <= cfg["objective.transmittance"] <= 1.0:
        raise ConfigError("objective.transmittance must lie in [0, 1] for the transmittance regularizer")
    if reg in ("binary_correlation", "binary_shots") and cfg["objective.shots"] < 1:
        raise ConfigError("objective.shots must be >= 1 for multi-shot regularizers")


def build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid(cfg["grid.n"], cfg["grid.dx"], cfg["grid.wavelength"])


def _make_element(kind: str, n: int, rng, cfg: ExperimentConfig):
    if kind == "phase":
        return PhaseMask(rng.uniform(0.0, 2.0 * np.pi, (n, n)))
    if kind == "zernike":
        count = cfg["model.zernike_count"]
        coeffs = rng.uniform(-0.1, 0.1, count) * cfg["grid.wavelength"]
        return ZernikeDOE(coeffs, refractive_index_delta=cfg["model.zernike_delta_n"])
    if kind in ("binary", "binary_hard"):
        return BinaryMask(0.5 * rng.standard_normal((n, n)), hard=kind == "binary_hard")
    count = cfg["model.selector_filters"]
    bank = np.eye(count)
    return SelectorMask(0.5 * rng.standard_normal((n, n, count)), bank)


def build_model(cfg: ExperimentConfig) -> Model:
    grid = build_grid(cfg)
    rng = np.random.default_rng(cfg["model.init_seed"])
    n = grid.n
    pad = cfg["model.pad_factor"]
    layers = []
    for i in range(cfg["model.layers"]):
        element = _make_element(cfg["model.element"], n, rng, cfg)
        last = i == cfg["model.layers"] - 1
        segment = None if last else PropagationSegment(cfg["model.d_layer"], pad_factor=pad)
        layers.append((element, segment))
    readout_kind = cfg["model.readout"]
    if readout_kind == "regions":
        readout = default_detector_regions(n, cfg["model.classes"])
    elif readout_kind == "image":
        readout = IntensityImage()
    else:
        theta = 0.01 * rng.standard_normal((cfg["model.decoder_outputs"], n * n))
        readout = LinearDecoder(theta)
    return Model(
        grid=grid,
        input_distance=cfg["model.d_in"],
        layers=layers,
        output_distance=cfg["model.d_out"],
        readout=readout,
        input_encoding=cfg["model.input_encoding"],
        pad_factor=pad,
        task=cfg["objective.task"],
        score_scale=cfg["model.score_scale"],
    )


def build_regularizer(cfg: ExperimentConfig) -> RegularizerConfig:
    kind = RegKind(cfg["objective.regularizer"])
    tr = cfg["objective.transmittance"]
    shots = cfg["objective.shots"]
    return RegularizerConfig(
        kind=kind,
        rho0=cfg["objective.rho0"],
        growth=cfg["objective.growth"],
        rho_max=cfg["objective.rho_max"],
        target_transmittance=tr if kind is RegKind.BINARY_TRANSMITTANCE else None,
        shot_count=shots if kind in (RegKind.BINARY_CORRELATION, RegKind.BINARY_SHOTS) else None,
        companion_weight=cfg["objective.companion_weight"],
        sigma=cfg["objective.sigma"],
        decoder_norm=cfg["objective.decoder_norm"],
    )


def build_datasets(cfg: ExperimentConfig):
    """Instantiate the (train, test) datasets the config describes."""
    n = cfg["grid.n"]
    resize = cfg["dataset.resize"] or None
    normalize = cfg["dataset.normalize"]
    if cfg["dataset.kind"] == "synthetic":
        train = synthetic_glyphs(
            cfg["dataset.train_count"], n, seed=cfg["dataset.seed"],
            classes=cfg["dataset.classes"], normalize=normalize,
        )
        test = synthetic_glyphs(
            cfg["dataset.test_count"], n, seed=cfg["dataset.seed"] + 1,
            classes=cfg["dataset.classes"], normalize=normalize,
        )
        return train, test
    train = load_idx_dataset(
        cfg["dataset.train_images"], cfg["dataset.train_labels"],
        grid_n=n, resize=resize, normalize=normalize, limit=cfg["dataset.train_count"],
    )
    test = load_idx_dataset(
        cfg["dataset.test_images"], cfg["dataset.test_labels"],
        grid_n=n, resize=resize, normalize=normalize, limit=cfg["dataset.test_count"],
    )
    return train, test
