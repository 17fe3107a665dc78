"""Command-line entry points: train, simulate, gradcheck, bench, export-masks.

Scientific outputs (report.csv, masks, fields, the frozen resolved config)
are byte-deterministic for a fixed seed; wall-clock timestamps go only to
run.log so golden-file comparisons stay stable.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, build_datasets, build_model, build_regularizer, load_config
from .elements import BinaryMask, SelectorMask, binary_to_pgm, phase_to_pgm, write_pgm
from .field import ComplexField, read_field, write_field
from .model import Model, gradient_check_model
from .propagation import DIRECT_SIZE_LIMIT, bench_propagation
from .training import TrainingDivergedError, train

GRADCHECK_GRID_LIMIT = 16
GRADCHECK_TOLERANCE = 1e-4


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ConfigError, TrainingDivergedError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavecoder",
        description="Differentiable wave-optics design engine",
    )
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="train the configured model and write a report")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="propagate a stored field through the optical stack")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--field-in", required=True)
    p_sim.add_argument("--field-out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the configured model")
    p_grad.add_argument("--config", required=True)
    p_grad.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="time both propagation routes and report working sets")
    p_bench.add_argument("--n", type=int, required=True)
    p_bench.add_argument("--w", type=int, default=4, help="angular-spectrum pad factor")
    p_bench.add_argument("--reps", type=int, default=3)
    p_bench.add_argument("--direct", action="store_true", help="insist on timing the direct route")
    p_bench.set_defaults(func=cmd_bench)

    p_masks = sub.add_parser("export-masks", help="write the configured model's masks to files")
    p_masks.add_argument("--config", required=True)
    p_masks.add_argument("--out", required=True)
    p_masks.set_defaults(func=cmd_export_masks)
    return parser


def _outdir(args, cfg: ExperimentConfig) -> Path:
    raw = args.out if getattr(args, "out", None) else cfg["output.dir"]
    if not raw:
        raise ConfigError("no output directory: set output.dir or pass --out")
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def export_masks(model: Model, outdir: Path, grid=None) -> list:
    """Write every layer's realized mask as PGM (visual) plus WFLD (lossless)."""
    written = []
    for i, (element, _) in enumerate(model.layers):
        realized = element.realize(model.grid)
        pgm = outdir / f"layer{i}_mask.pgm"
        if isinstance(element, (BinaryMask, SelectorMask)):
            binary_to_pgm(pgm, np.real(realized))
        else:
            phase_to_pgm(pgm, realized)
        wfld = outdir / f"layer{i}_mask.wfld"
        write_field(wfld, ComplexField(model.grid, np.asarray(realized, dtype=complex)))
        written.extend([pgm, wfld])
    return written


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.values["train.seed"] = args.seed
    outdir = _outdir(args, cfg)
    model = build_model(cfg)
    train_set, test_set = build_datasets(cfg)
    reg = build_regularizer(cfg)

    log_path = outdir / "run.log"
    with open(log_path, "a", encoding="utf-8") as log_fh:

        def log(message: str) -> None:
            log_fh.write(f"{time.strftime('%Y-%m-%d %H:%M:%S')} {message}\n")
            log_fh.flush()

        log(f"train start: config={args.config} seed={cfg['train.seed']}")
        report = train(
            model,
            train_set,
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            learning_rate=cfg["train.learning_rate"],
            seed=cfg["train.seed"],
            reg_config=reg,
            task=cfg["objective.task"],
            val_dataset=test_set,
            log=log,
        )
        log("train done")

    report.write_csv(outdir / "report.csv")
    export_masks(model, outdir)
    (outdir / "resolved.cfg").write_text(cfg.resolved_text(), encoding="ascii")
    metric = report.rows[-1][2] if report.rows else float("nan")
    print(f"trained {cfg['train.epochs']} epochs; final val metric {metric}; outputs in {outdir}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    field = read_field(args.field_in)
    if field.grid != model.grid:
        raise ConfigError(
            f"field grid ({field.grid.n}, {field.grid.dx}, {field.grid.wavelength}) "
            f"does not match the config grid ({model.grid.n}, {model.grid.dx}, {model.grid.wavelength})"
        )
    out = model.propagate_field(field)
    out_path = Path(args.field_out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_field(out_path, out)
    intensity = np.abs(out.values) ** 2
    peak = intensity.max()
    levels = np.zeros_like(intensity) if peak == 0 else np.clip(intensity / peak * 255.0, 0, 255)
    write_pgm(out_path.with_suffix(".intensity.pgm"), np.round(levels))
    print(f"propagated field written to {out_path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.values["train.seed"] = args.seed
    n = cfg["grid.n"]
    if n > GRADCHECK_GRID_LIMIT:
        raise ConfigError(
            f"gradcheck is limited to grids of {GRADCHECK_GRID_LIMIT}x{GRADCHECK_GRID_LIMIT} "
            f"(config asks for {n}); finite differences at larger sizes are not worth the wait"
        )
    model = build_model(cfg)
    rng = np.random.default_rng(cfg["train.seed"])
    images = rng.uniform(0.0, 1.0, (2, n, n))
    targets = _gradcheck_targets(model, rng)
    result = gradient_check_model(model, (images, targets), reg_config=build_regularizer(cfg))
    print(result)
    if result.excluded:
        print("straight-through parameters excluded from the gate:", ", ".join(sorted(result.excluded)))
    ok = result.max_rel_error < GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (gate {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def _gradcheck_targets(model: Model, rng):
    from .model import DetectorRegions, IntensityImage, LinearDecoder

    if isinstance(model.readout, DetectorRegions):
        return rng.integers(0, len(model.readout.regions), 2)
    if isinstance(model.readout, IntensityImage):
        return rng.uniform(0.0, 1.0, (2, model.grid.n, model.grid.n))
    if isinstance(model.readout, LinearDecoder):
        return rng.standard_normal((2, model.readout.theta.shape[0]))
    raise ConfigError(f"unsupported readout {model.readout!r}")


def cmd_bench(args) -> int:
    if args.n < 2:
        raise ConfigError("--n must be at least 2")
    if args.direct and args.n > DIRECT_SIZE_LIMIT:
        raise ConfigError(
            f"direct route requested at n={args.n}, above the n<={DIRECT_SIZE_LIMIT} guard"
        )
    report = bench_propagation(args.n, args.w, repetitions=args.reps)
    print(f"n={report['n']} w={report['pad_factor']} repetitions={args.reps}")
    print(f"direct working-set elements (N^4):   {report['direct_elements']}")
    print(f"AS working-set elements ((wN)^2):    {report['as_elements']}")
    print(f"memory ratio direct/AS:              {report['ratio']:g}")
    print(f"AS seconds per propagation:          {report['as_seconds']:.6f}")
    if "direct_seconds" in report:
        print(f"direct seconds per propagation:      {report['direct_seconds']:.6f}")
    else:
        print(f"direct timing skipped (n above the n<={DIRECT_SIZE_LIMIT} guard)")
    return 0


def cmd_export_masks(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    written = export_masks(model, outdir)
    print(f"wrote {len(written)} mask files to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
