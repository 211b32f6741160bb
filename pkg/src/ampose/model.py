"""The full lifting network: input projection, (encoder, GCN block) x depth, output projection."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np
import yaml

from . import encoder as enc
from . import graphconv as gc
from .graphconv import ConfigError
from .numerics import DimensionError, Tensor, matmul, mul
from .skeleton import PartitionedAdjacency, Skeleton, load_skeleton, partition_adjacency


@dataclass
class ModelConfig:
    num_joints: int = 17
    channels: int = 512
    depth: int = 5
    num_heads: int = 8
    mlp_ratio: int = 2
    gcn_block: str = gc.PRIMARY
    block_ffn_ratio: int = 1  # hidden width factor for the transformer/convnext block variants
    skeleton: Any = "h36m17"  # bundled name, YAML path, or inline mapping
    attention_scaling: str = enc.PER_HEAD
    dropout: float = 0.0
    output_scale: float = 1000.0  # network regresses metres; forward reports millimetres

    def validate(self) -> None:
        problems = []
        if self.depth < 1:
            problems.append(f"depth must be >= 1 (got {self.depth})")
        if self.channels < 1:
            problems.append(f"channels must be >= 1 (got {self.channels})")
        if self.num_heads < 1 or self.channels % self.num_heads:
            problems.append(f"channels {self.channels} not divisible by num_heads {self.num_heads}")
        if self.mlp_ratio < 1 or self.block_ffn_ratio < 1:
            problems.append("mlp_ratio and block_ffn_ratio must be >= 1")
        if self.gcn_block not in gc.BLOCK_DESIGNS:
            problems.append(f"gcn_block {self.gcn_block!r} not in {gc.BLOCK_DESIGNS}")
        if self.attention_scaling not in (enc.PER_HEAD, enc.FULL_WIDTH):
            problems.append(f"attention_scaling {self.attention_scaling!r} not in {(enc.PER_HEAD, enc.FULL_WIDTH)}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must lie in [0, 1) (got {self.dropout})")
        if not self.output_scale > 0:
            problems.append(f"output_scale must be positive (got {self.output_scale})")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(d))


def load_model_config(path: str | Path) -> ModelConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if "model" in data and isinstance(data["model"], Mapping):
        data = data["model"]
    return ModelConfig.from_dict(data)


def sub(params: Mapping[str, Any], prefix: str) -> dict[str, Any]:
    """View of the entries under ``prefix.`` with the prefix stripped."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def param_spec(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    d, j = cfg.channels, cfg.num_joints
    spec: dict[str, tuple[tuple[int, ...], str]] = {
        "input_proj.weight": ((2, d), "weight"),
        "input_proj.bias": ((d,), "bias"),
    }
    for i in range(cfg.depth):
        for name, v in enc.encoder_spec(j, d, cfg.mlp_ratio).items():
            spec[f"layers.{i}.encoder.{name}"] = v
        for name, v in gc.gcn_block_spec(cfg.gcn_block, d, cfg.block_ffn_ratio).items():
            spec[f"layers.{i}.gcn.{name}"] = v
    spec["output_proj.weight"] = ((d, 3), "weight")
    spec["output_proj.bias"] = ((3,), "bias")
    return spec


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases and positional embeddings, unit LN gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, kind) in param_spec(cfg).items():
        if kind == "weight":
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "ones":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    skeleton: Skeleton = field(repr=False)
    partition: PartitionedAdjacency = field(repr=False)

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.params.items())

    def forward(self, pose2d) -> np.ndarray:
        return forward(self, pose2d).data


def build_model(cfg: ModelConfig, seed: int = 0, params: Mapping[str, np.ndarray] | None = None) -> Model:
    cfg.validate()
    skel = load_skeleton(cfg.skeleton)
    if skel.num_joints != cfg.num_joints:
        raise ConfigError(f"num_joints {cfg.num_joints} does not match skeleton {skel.name} ({skel.num_joints} joints)")
    expected = param_spec(cfg)
    if params is None:
        params = init_params(cfg, seed)
    else:
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, (shape, _) in expected.items():
            if tuple(params[name].shape) != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")
        params = {name: np.asarray(params[name], dtype=np.float64) for name in expected}
    return Model(cfg, dict(params), skel, partition_adjacency(skel))


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def forward(model: Model, pose2d, params: Mapping[str, Any] | None = None, rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass; ``pose2d`` is (J, 2) or (B, J, 2).

    ``params`` overrides the model's arrays (pass leaf Tensors to record
    gradients). ``rng`` enables dropout, so leave it None at inference.
    """
    cfg = model.config
    w = model.params if params is None else params
    x = pose2d if isinstance(pose2d, Tensor) else Tensor(pose2d)
    if x.ndim < 2 or x.shape[-2:] != (cfg.num_joints, 2):
        raise DimensionError(f"expected input (..., {cfg.num_joints}, 2), got {x.shape}")
    groups = model.partition.normalized
    drop = (lambda t: _dropout(t, cfg.dropout, rng)) if cfg.dropout > 0.0 and rng is not None else None
    z = matmul(x, w["input_proj.weight"]) + w["input_proj.bias"]
    for i in range(cfg.depth):
        z = enc.encoder_forward(z, sub(w, f"layers.{i}.encoder"), cfg.num_heads, cfg.attention_scaling, drop)
        z = gc.gcn_block_forward(z, groups, sub(w, f"layers.{i}.gcn"), cfg.gcn_block)
    out = matmul(z, w["output_proj.weight"]) + w["output_proj.bias"]
    return out * cfg.output_scale if cfg.output_scale != 1.0 else out


def param_report(cfg: ModelConfig) -> dict[str, int]:
    """Trainable scalars per top-level component (input_proj, layers.i.encoder, ...)."""
    report: dict[str, int] = {}
    for name, (shape, _) in param_spec(cfg).items():
        parts = name.split(".")
        key = ".".join(parts[:3]) if parts[0] == "layers" else parts[0]
        report[key] = report.get(key, 0) + int(np.prod(shape))
    return report


def count_params(model: Model | ModelConfig) -> int:
    if isinstance(model, Model):
        return int(sum(p.size for p in model.params.values()))
    return sum(param_report(model).values())


def flop_report(cfg: ModelConfig) -> dict[str, int]:
    """Matmul multiply-accumulates for one pose, one MAC counted as one FLOP."""
    j, d = cfg.num_joints, cfg.channels
    report = {"input_proj": j * 2 * d}
    for i in range(cfg.depth):
        for k, v in enc.encoder_macs(j, d, cfg.mlp_ratio).items():
            report[f"layers.{i}.encoder.{k}"] = v
        for k, v in gc.gcn_block_macs(cfg.gcn_block, j, d, cfg.block_ffn_ratio).items():
            report[f"layers.{i}.gcn.{k}"] = v
    report["output_proj"] = j * d * 3
    return report


def count_flops(model: Model | ModelConfig) -> int:
    cfg = model.config if isinstance(model, Model) else model
    return sum(flop_report(cfg).values())
