"""Loss, optimiser, learning-rate schedule and the training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .data import Dataset
from .graphconv import ConfigError
from .metrics import mpjpe
from .model import Model, ModelConfig, build_model, forward
from .numerics import DimensionError, Tensor, backward, total

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr0: float = 2.5e-5
    lr_decay: float = 0.98
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    include_root: bool = True
    max_steps: int | None = None  # stop early after this many optimiser steps in total

    def validate(self) -> None:
        problems = []
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0 (got {self.epochs})")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if not self.lr0 > 0:
            problems.append(f"lr0 must be positive (got {self.lr0})")
        if not 0 < self.lr_decay <= 1:
            problems.append(f"lr_decay must lie in (0, 1] (got {self.lr_decay})")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            problems.append("adam needs 0 <= beta1, beta2 < 1 and eps > 0")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**dict(d))


def mse_loss(pred, gt, include_root: bool = True, root: int = 0) -> Tensor:
    """Mean over joints (and samples) of the squared Euclidean joint error."""
    if tuple(pred.shape) != tuple(np.shape(gt)):
        raise DimensionError(f"loss shape mismatch: pred {pred.shape} vs gt {np.shape(gt)}")
    diff = pred - gt
    sq = diff * diff
    n = int(np.prod(pred.shape[:-1]))
    if not include_root:
        mask = np.ones(pred.shape[-2:])
        mask[root] = 0.0
        sq = sq * mask
        n -= n // pred.shape[-2]
    return total(sq) * (1.0 / n)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay**epoch


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Sample order for one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def loss_and_grads(model: Model, x: np.ndarray, y: np.ndarray, include_root: bool = True, rng=None):
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    loss = mse_loss(forward(model, x, leaves, rng), y, include_root, model.skeleton.root)
    return float(loss.data), backward(loss, leaves)


def dataset_loss(model: Model, dataset: Dataset, include_root: bool = True, chunk: int = 512) -> float:
    """Loss over the full dataset, sample-weighted."""
    x, y = dataset.inputs(), dataset.targets()
    acc = 0.0
    for s in range(0, len(x), chunk):
        pred = forward(model, x[s : s + chunk])
        acc += float(mse_loss(pred, y[s : s + chunk], include_root, model.skeleton.root).data) * len(x[s : s + chunk])
    return acc / len(x)


def predict(model: Model, pose2d: np.ndarray, chunk: int = 512) -> np.ndarray:
    x = np.asarray(pose2d, dtype=np.float64)
    if x.ndim == 2:
        return model.forward(x)
    return np.concatenate([model.forward(x[s : s + chunk]) for s in range(0, len(x), chunk)]) if len(x) else np.zeros((0, x.shape[1], 3))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: Model
    metrics: list[dict[str, Any]]


def make_checkpoint(model: Model, state: AdamState, cfg: TrainConfig, progress: Mapping[str, int]) -> Checkpoint:
    return Checkpoint(
        model_config=model.config.to_dict(),
        params={k: v.copy() for k, v in model.params.items()},
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        adam_step=state.step,
        train_config=cfg.to_dict(),
        progress=dict(progress),
        rng={"scheme": "numpy-pcg64[seed,epoch] shuffle; [seed,1,step] dropout", "seed": cfg.seed},
    )


def restore(ckpt: Checkpoint) -> tuple[Model, AdamState, TrainConfig]:
    model = build_model(ModelConfig.from_dict(ckpt.model_config), params=ckpt.params)
    state = AdamState(
        m={k: v.copy() for k, v in ckpt.adam_m.items()},
        v={k: v.copy() for k, v in ckpt.adam_v.items()},
        step=ckpt.adam_step,
    )
    return model, state, TrainConfig.from_dict(ckpt.train_config)


def train(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    val: Dataset | None = None,
    state: AdamState | None = None,
    progress: Mapping[str, int] | None = None,
    out_dir: str | Path | None = None,
    save_every_epoch: bool = False,
    on_epoch: Callable[[dict[str, Any]], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam on the squared-error loss with per-epoch exponential lr decay.

    Resuming: pass the ``state`` and ``progress`` from a checkpoint. Batch
    order is derived from (seed, epoch), so a resumed run replays exactly
    the batches an uninterrupted run would have seen.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    if dataset.skeleton.num_joints != model.config.num_joints:
        raise ConfigError(
            f"dataset has {dataset.skeleton.num_joints} joints, model expects {model.config.num_joints}"
        )
    x_all, y_all = dataset.inputs(), dataset.targets()
    eval_set = val if val is not None else dataset
    state = state or AdamState()
    prog = {"epoch": 0, "batch": 0, "step": 0, **(progress or {})}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics: list[dict[str, Any]] = []
    n = len(x_all)
    n_batches = -(-n // cfg.batch_size)
    dropout = model.config.dropout > 0.0

    def done() -> bool:
        return cfg.max_steps is not None and prog["step"] >= cfg.max_steps

    while prog["epoch"] < cfg.epochs and not done():
        epoch = prog["epoch"]
        lr = lr_at_epoch(epoch, cfg)
        order = epoch_order(cfg.seed, epoch, n)
        loss_sum, seen = 0.0, 0
        while prog["batch"] < n_batches and not done():
            idx = order[prog["batch"] * cfg.batch_size : (prog["batch"] + 1) * cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, 1, prog["step"]]) if dropout else None
            loss, grads = loss_and_grads(model, x_all[idx], y_all[idx], cfg.include_root, rng)
            adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            loss_sum += loss * len(idx)
            seen += len(idx)
            prog["batch"] += 1
            prog["step"] += 1
        if prog["batch"] < n_batches:
            break  # stopped mid-epoch by max_steps
        prog["epoch"] += 1
        prog["batch"] = 0
        val_pred = predict(model, eval_set.inputs())
        record = {
            "epoch": epoch,
            "step": prog["step"],
            "lr": lr,
            "loss": loss_sum / seen if seen else None,
            "val_mpjpe": mpjpe(val_pred, eval_set.targets()),
        }
        metrics.append(record)
        log.info("epoch %d loss %.6g val_mpjpe %.3f lr %.3g", epoch, record["loss"] or float("nan"), record["val_mpjpe"], lr)
        if on_epoch is not None:
            on_epoch(record)
        if out is not None:
            with (out / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if save_every_epoch:
                save_checkpoint(make_checkpoint(model, state, cfg, prog), out / f"epoch_{epoch:03d}.ckpt")
    ckpt = make_checkpoint(model, state, cfg, prog)
    if out is not None:
        save_checkpoint(ckpt, out / "final.ckpt")
    return TrainResult(ckpt, model, metrics)
