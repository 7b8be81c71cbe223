"""Seeded training loop, evaluation, checkpoints and the data/width sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import functional as Fn
from . import tensorio
from .data import LabeledImageSet, batches
from .models import ArchitectureConfig, Network, build
from .tensor import Parameter, backward

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd-momentum")
MANIFEST = "manifest.json"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-2
    milestones: tuple[int, ...] = (6, 8)  # epochs (0-based) at which lr is multiplied by gamma
    gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    fraction: float = 1.0
    dtype: str = "f32"
    eval_batch_size: int = 250

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        for name in ("epochs", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0 or self.gamma <= 0:
            raise ValueError("lr and gamma must be positive")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be 'f32' or 'f64', got {self.dtype!r}")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma ** sum(epoch >= m for m in self.milestones)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[Parameter], lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


class SGDMomentum:
    def __init__(self, params: list[Parameter], lr: float, momentum=0.9, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, buf in zip(self.params, self.velocity):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            buf *= self.momentum
            buf += g
            p.data -= (self.lr * buf).astype(p.data.dtype)


def make_optimizer(params: list[Parameter], cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, weight_decay=cfg.weight_decay)
    return SGDMomentum(params, cfg.lr, cfg.momentum, cfg.weight_decay)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_error: float


@dataclass
class RunReport:
    arch: dict
    config: dict
    epochs: list[EpochStats]
    final_test_error: float
    best_test_error: float
    best_epoch: int
    params: int
    macs: int
    initial_loss: float
    data_provenance: str = ""
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        for err in (self.final_test_error, self.best_test_error):
            if not 0.0 <= err <= 100.0:
                raise ValueError(f"test error {err} outside [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        a = self.arch
        return (f"{a['family']}(w={a['width']}, {a['group']}): params={self.params:,} macs={self.macs:,} "
                f"final test error={self.final_test_error:.2f}% best={self.best_test_error:.2f}% "
                f"(epoch {self.best_epoch}) time={self.wall_time:.1f}s")


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


def evaluate(net: Network, data: LabeledImageSet, batch_size: int = 250) -> tuple[float, float]:
    """``(error %, mean loss)`` in eval mode; the network's mode is restored afterwards."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    was_training = net.training
    net.eval()
    wrong, loss_sum = 0, 0.0
    try:
        for x, y in batches(data, batch_size, shuffle=False):
            logits = net(x.astype(net.arch.np_dtype, copy=False))
            wrong += int((logits.data.argmax(axis=1) != y).sum())
            loss_sum += float(Fn.softmax_cross_entropy(logits, y).data) * len(y)
    finally:
        net.train(was_training)
    return 100.0 * wrong / len(data), loss_sum / len(data)


def _subsample(data: LabeledImageSet, fraction: float, seed: int) -> LabeledImageSet:
    if fraction >= 1.0:
        return data
    n = max(1, int(round(fraction * len(data))))
    idx = np.sort(np.random.default_rng([seed, 7]).permutation(len(data))[:n])
    return data.subset(idx)


def _snapshot(net: Network) -> dict[str, np.ndarray]:
    state = {name: p.data.copy() for name, p in net.named_parameters()}
    state.update({name: b.copy() for name, b in net.named_buffers()})
    return state


def load_state(net: Network, state: dict[str, np.ndarray]) -> None:
    params = dict(net.named_parameters())
    buffers = dict(net.named_buffers())
    missing = (set(params) | set(buffers)) - set(state)
    if missing:
        raise KeyError(f"state is missing {sorted(missing)}")
    for name, p in params.items():
        if state[name].shape != p.data.shape:
            raise ValueError(f"{name}: shape {state[name].shape} does not match {p.data.shape}")
        p.data[...] = state[name]
    for name, b in buffers.items():
        b[...] = state[name]


def train(
    net: Network,
    train_data: LabeledImageSet,
    test_data: LabeledImageSet,
    cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
) -> RunReport:
    """Train ``net`` in place and report per-epoch statistics.

    Runs are reproducible: batch order, dropout masks and subsampling are all
    derived from ``cfg.seed``.  The best-test-error weights are kept in the
    checkpoint (when ``checkpoint_dir`` is given); the network itself finishes
    with its last-epoch weights.
    """
    if len(train_data) == 0 or len(test_data) == 0:
        raise ValueError("training and test sets must be non-empty")
    if net.arch.dtype != cfg.dtype:
        raise ValueError(f"network dtype {net.arch.dtype} differs from config dtype {cfg.dtype}")
    start = time.perf_counter()
    dtype = net.arch.np_dtype
    data = _subsample(train_data, cfg.fraction, cfg.seed)
    net.dropout_rng = np.random.default_rng([cfg.seed, 1])
    params = net.parameters()
    opt = make_optimizer(params, cfg)
    initial_error, initial_loss = evaluate(net, data, cfg.eval_batch_size)
    log.info("initial train loss %.4f (error %.2f%%)", initial_loss, initial_error)

    history: list[EpochStats] = []
    best_error, best_epoch, best_state = math.inf, -1, None
    net.train()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        loss_sum, correct, seen = 0.0, 0, 0
        for step, (x, y) in enumerate(batches(data, cfg.batch_size, seed=cfg.seed * 1000 + epoch)):
            net.zero_grad()
            logits = net(x.astype(dtype, copy=False))
            loss = Fn.softmax_cross_entropy(logits, y)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became {value} at epoch {epoch} step {step} (lr {opt.lr:g}); "
                    "try a smaller learning rate"
                )
            backward(loss)
            opt.step()
            loss_sum += value * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        test_error, test_loss = evaluate(net, test_data, cfg.eval_batch_size)
        stats = EpochStats(epoch, opt.lr, loss_sum / seen, correct / seen, test_loss, test_error)
        history.append(stats)
        log.info("epoch %d lr %.2g train loss %.4f acc %.3f test error %.2f%%",
                 epoch, opt.lr, stats.train_loss, stats.train_accuracy, test_error)
        if test_error < best_error:
            best_error, best_epoch, best_state = test_error, epoch, _snapshot(net)

    report = net.cost_report()
    result = RunReport(
        arch=net.arch.to_dict(),
        config=asdict(cfg),
        epochs=history,
        final_test_error=history[-1].test_error,
        best_test_error=best_error,
        best_epoch=best_epoch,
        params=net.num_parameters(),
        macs=report.total_macs,
        initial_loss=initial_loss,
        data_provenance=train_data.provenance,
        wall_time=time.perf_counter() - start,
    )
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, net, result, best_state)
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, net: Network, report: RunReport | None = None,
                    state: dict[str, np.ndarray] | None = None) -> None:
    """Write ``manifest.json`` plus one SGT1 file per parameter and buffer."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = _snapshot(net) if state is None else state
    tensors = {}
    for name, array in state.items():
        fname = name + ".sgt"
        tensorio.save(path / fname, array)
        tensors[name] = {"file": fname, "shape": list(array.shape), "dtype": str(array.dtype)}
    manifest = {"arch": net.arch.to_dict(), "tensors": tensors}
    if report is not None:
        manifest["config"] = report.config
        manifest["epoch"] = report.best_epoch
        manifest["metrics"] = {
            "best_test_error": report.best_test_error,
            "final_test_error": report.final_test_error,
            "params": report.params,
            "macs": report.macs,
            "history": [asdict(e) for e in report.epochs],
        }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild the network stored in a checkpoint directory."""
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"{path} is not a checkpoint: {MANIFEST} missing")
    try:
        manifest = json.loads(manifest_path.read_text())
        arch = ArchitectureConfig(**manifest["arch"])
        entries = manifest["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{manifest_path}: malformed manifest ({exc})") from None
    net = build(arch)
    state = {name: tensorio.load(path / entry["file"]) for name, entry in entries.items()}
    load_state(net, state)
    net.eval()
    return net, manifest


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_FIELDS = ["family", "group", "width", "fraction", "seed", "params", "macs",
                "final_test_error", "best_test_error", "train_loss", "wall_time"]


def _row(report: RunReport, fraction: float, seed: int) -> dict:
    a = report.arch
    return {
        "family": a["family"], "group": a["group"], "width": a["width"], "fraction": fraction,
        "seed": seed, "params": report.params, "macs": report.macs,
        "final_test_error": round(report.final_test_error, 4),
        "best_test_error": round(report.best_test_error, 4),
        "train_loss": round(report.epochs[-1].train_loss, 6),
        "wall_time": round(report.wall_time, 2),
    }


def sweep_data_fraction(
    archs: Sequence[ArchitectureConfig],
    fractions: Sequence[float],
    cfg: TrainConfig,
    train_data: LabeledImageSet,
    test_data: LabeledImageSet,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """One training run per (architecture, fraction, seed)."""
    rows = []
    for arch in archs:
        for fraction in fractions:
            for seed in seeds:
                run_cfg = replace(cfg, fraction=fraction, seed=seed)
                net = build(replace(arch, seed=seed, dtype=cfg.dtype))
                rows.append(_row(train(net, train_data, test_data, run_cfg), fraction, seed))
                log.info("sweep row %s", rows[-1])
    return rows


def sweep_width(
    family: str,
    widths: Sequence[int],
    cfg: TrainConfig,
    train_data: LabeledImageSet,
    test_data: LabeledImageSet,
    seeds: Sequence[int] = (0,),
    group: str = "auto",
) -> list[dict]:
    """One training run per (width, seed) of a single family."""
    archs = [ArchitectureConfig(family, w, group=group, dtype=cfg.dtype) for w in widths]
    return sweep_data_fraction(archs, [cfg.fraction], cfg, train_data, test_data, seeds)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
