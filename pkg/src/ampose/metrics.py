"""MPJPE, PCK and AUC for root-relative 3D poses in millimetres."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = tuple(float(t) for t in range(5, 155, 5))


class MetricError(ValueError):
    pass


def joint_errors(pred, gt) -> np.ndarray:
    """Euclidean distance per joint; shape (..., J)."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    """Mean per-joint Euclidean error over every joint (and sample, if batched)."""
    return float(np.mean(joint_errors(pred, gt)))


def pck(errors, threshold: float = PCK_THRESHOLD_MM) -> float:
    """Fraction of errors at or below ``threshold``."""
    if threshold <= 0:
        raise MetricError(f"threshold must be positive, got {threshold}")
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise MetricError("PCK of an empty error set is undefined")
    return float(np.count_nonzero(e <= threshold) / e.size)


def auc(errors, thresholds: Sequence[float] = AUC_THRESHOLDS_MM) -> float:
    """Mean PCK over a threshold grid (5..150 mm in 5 mm steps by default)."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise MetricError("AUC of an empty error set is undefined")
    return float(np.mean([pck(e, t) for t in thresholds]))


@dataclass
class EvalReport:
    mpjpe_mm: float
    pck: float
    auc: float
    n_samples: int
    pck_mode: str = "joint"
    pck_threshold_mm: float = PCK_THRESHOLD_MM
    auc_thresholds_mm: list[float] = field(default_factory=lambda: list(AUC_THRESHOLDS_MM))
    per_action_mpjpe: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def evaluate(
    pred,
    gt,
    actions: Sequence[str | None] | None = None,
    pck_mode: str = "joint",
    threshold: float = PCK_THRESHOLD_MM,
    thresholds: Sequence[float] = AUC_THRESHOLDS_MM,
) -> EvalReport:
    """Score a batch of (N, J, 3) predictions.

    ``pck_mode="joint"`` pools all joint errors of the set; ``"pose"``
    scores each sample by its own MPJPE.
    """
    err = joint_errors(pred, gt)
    if err.ndim != 2 or err.shape[0] == 0:
        raise MetricError(f"expected a non-empty (N, J, 3) batch, got errors of shape {err.shape}")
    if pck_mode == "joint":
        pooled = err.reshape(-1)
    elif pck_mode == "pose":
        pooled = err.mean(axis=1)
    else:
        raise MetricError(f"unknown pck_mode {pck_mode!r}")
    per_action: dict[str, float] = {}
    if actions is not None:
        for name in sorted({a for a in actions if a is not None}):
            mask = np.array([a == name for a in actions])
            per_action[name] = float(err[mask].mean())
    return EvalReport(
        mpjpe_mm=float(err.mean()),
        pck=pck(pooled, threshold),
        auc=auc(pooled, thresholds),
        n_samples=int(err.shape[0]),
        pck_mode=pck_mode,
        pck_threshold_mm=float(threshold),
        auc_thresholds_mm=[float(t) for t in thresholds],
        per_action_mpjpe=per_action,
    )
