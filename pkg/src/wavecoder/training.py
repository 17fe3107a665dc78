"""Dataset container, Adam optimizer, the training loop, and evaluation
metrics for classification and imaging models."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .autodiff import Tape, backward
from .model import Model, objective_e2e
from .regularizers import RegKind, RegularizerConfig, rho_schedule

THREADS_ENV = "WAVECODER_THREADS"


class TrainingDivergedError(RuntimeError):
    """Raised when a step produces a non-finite loss; training never skips it."""


@dataclass
class Dataset:
    """Amplitude-encoded inputs with labels (classification) or target images."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if len(self.inputs) != len(self.targets):
            raise ValueError(
                f"{len(self.inputs)} inputs but {len(self.targets)} targets"
            )
        if np.any(self.inputs < 0):
            raise ValueError("amplitude-encoded inputs must be non-negative")

    def __len__(self):
        return len(self.inputs)

    @property
    def classification(self) -> bool:
        return np.issubdtype(self.targets.dtype, np.integer)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.inputs[indices], self.targets[indices])


class Adam:
    """Adaptive-moment estimation over named parameter arrays (updated in place)."""

    def __init__(self, params: dict, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainingReport:
    """Per-epoch curve plus final metrics and realized mask snapshots."""

    rows: list = dc_field(default_factory=list)
    final_metrics: dict = dc_field(default_factory=dict)
    mask_snapshots: dict = dc_field(default_factory=dict)

    def add(self, epoch: int, train_loss: float, val_metric: float, rho: float) -> None:
        # plain Python scalars keep the CSV free of numpy reprs
        self.rows.append((int(epoch), float(train_loss), float(val_metric), float(rho)))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("epoch,train_loss,val_metric,rho\n")
            for epoch, loss, metric, rho in self.rows:
                fh.write(f"{epoch},{loss!r},{metric!r},{rho!r}\n")


def worker_count() -> int:
    """Parallel worker cap: WAVECODER_THREADS bounds it, hardware floors it."""
    hw = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return hw
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, min(hw, cap))


def train(
    model: Model,
    dataset: Dataset,
    *,
    epochs: int,
    batch_size: int = 32,
    learning_rate: float = 0.01,
    seed: int,
    reg_config: RegularizerConfig | None = None,
    task: str | None = None,
    val_dataset: Dataset | None = None,
    log=None,
) -> TrainingReport:
    """Shuffled mini-batch training with Adam; deterministic for a fixed seed.

    Records (epoch, mean train loss, validation metric, rho) per epoch. A
    non-finite loss aborts immediately with the offending step identified.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    reg_config = reg_config or RegularizerConfig(RegKind.NONE)
    rng = np.random.default_rng(seed)
    params = model.params()
    adam = Adam(params, learning_rate)
    report = TrainingReport()
    eval_set = val_dataset if val_dataset is not None else dataset
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            tape = Tape()
            pvars = model.make_param_vars(tape)
            loss = objective_e2e(
                model,
                (dataset.inputs[idx], dataset.targets[idx]),
                reg_config,
                epoch=epoch,
                task=task,
                tape=tape,
                pvars=pvars,
            )
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value!r} at epoch {epoch}, step {step}"
                )
            grads = backward(loss)
            adam.step({name: grads.get(var) for name, var in pvars.items()})
            epoch_losses.append(value)
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        metric = _headline_metric(evaluate(model, eval_set))
        report.add(epoch, mean_loss, metric, rho_schedule(epoch, reg_config))
        if log is not None:
            log(f"epoch {epoch}: loss {mean_loss:.6f} metric {metric:.4f}")
    report.final_metrics = evaluate(model, eval_set)
    report.mask_snapshots = {
        f"layer{i}": np.asarray(element.realize(model.grid))
        for i, (element, _) in enumerate(model.layers)
    }
    return report


def _headline_metric(metrics: dict) -> float:
    return metrics.get("accuracy", metrics.get("psnr", float("nan")))


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); exact reconstructions report +inf."""
    mse = float(np.mean((np.asarray(pred, float) - np.asarray(target, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def evaluate(model: Model, dataset: Dataset, batch_size: int = 64) -> dict:
    """Accuracy for labeled datasets, MSE/PSNR for image targets.

    Batches evaluate on independent tapes; chunks run in parallel up to
    worker_count() workers, results merged in index order.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    chunks = [
        (dataset.inputs[s : s + batch_size], dataset.targets[s : s + batch_size])
        for s in range(0, len(dataset), batch_size)
    ]

    def run(chunk):
        images, targets = chunk
        tape = Tape()
        pvars = model.make_param_vars(tape, requires_grad=False)
        out = np.asarray(model.forward_batch(tape, images, pvars).value)
        if dataset.classification:
            return int(np.sum(np.argmax(out, axis=1) == targets)), len(targets)
        return float(np.sum((out - targets) ** 2)), out.size

    workers = worker_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    first = sum(r[0] for r in results)
    second = sum(r[1] for r in results)
    if dataset.classification:
        return {"accuracy": first / second}
    mse = first / second
    return {"mse": mse, "psnr": float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))}
