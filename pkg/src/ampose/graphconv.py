"""Graph convolutions over a skeleton and the GCN block variants.

Weights are passed as flat ``name -> Tensor`` mappings so the same code
serves forward passes, gradient checks and parameter accounting.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .numerics import DimensionError, Tensor, gelu, layer_norm, matmul

PRIMARY = "primary"
TWO_RESIDUAL = "two_residual"
TRANSFORMER_STYLE = "transformer_style"
CONVNEXT_STYLE = "convnext_style"
BLOCK_DESIGNS = (PRIMARY, TWO_RESIDUAL, TRANSFORMER_STYLE, CONVNEXT_STYLE)


class ConfigError(ValueError):
    pass


def vanilla_gconv(x, ahat, theta, bias=None) -> Tensor:
    """Single-filter graph convolution: ahat @ x @ theta (+ bias)."""
    ahat = np.asarray(ahat, dtype=np.float64)
    if ahat.shape != (x.shape[-2], x.shape[-2]):
        raise DimensionError(f"adjacency {ahat.shape} does not match {x.shape[-2]} joints")
    out = matmul(ahat, matmul(x, theta))
    return out + bias if bias is not None else out


def grouped_gconv(x, ahat_groups: Sequence[np.ndarray], thetas: Sequence, bias=None) -> Tensor:
    """Sum over groups k of ahat_k @ x @ theta_k (+ one shared bias)."""
    if len(ahat_groups) != len(thetas):
        raise DimensionError(f"{len(ahat_groups)} adjacency groups but {len(thetas)} filters")
    shapes = {tuple(t.shape) for t in thetas}
    if len(shapes) != 1:
        raise DimensionError(f"group filters must share one shape, got {sorted(shapes)}")
    out = None
    for ahat, theta in zip(ahat_groups, thetas):
        term = vanilla_gconv(x, ahat, theta)
        out = term if out is None else out + term
    return out + bias if bias is not None else out


def _conv(x, ahat_groups, w: Mapping[str, Tensor], prefix: str) -> Tensor:
    thetas = [w[f"{prefix}.theta{k}"] for k in (1, 2, 3)]
    return grouped_gconv(x, ahat_groups, thetas, w.get(f"{prefix}.bias"))


def _ln(x, w, prefix):
    return layer_norm(x, w[f"{prefix}.gamma"], w[f"{prefix}.beta"])


def _ffn(x, w, prefix):
    h = gelu(matmul(x, w[f"{prefix}.fc1.weight"]) + w[f"{prefix}.fc1.bias"])
    return matmul(h, w[f"{prefix}.fc2.weight"]) + w[f"{prefix}.fc2.bias"]


def gcn_block_forward(z, ahat_groups, w: Mapping[str, Tensor], design: str = PRIMARY) -> Tensor:
    """Apply one GCN block; output has the input's shape for every design."""
    if design == PRIMARY:
        h = gelu(_conv(z, ahat_groups, w, "conv_a"))
        return h + gelu(_conv(h, ahat_groups, w, "conv_b"))
    if design == TWO_RESIDUAL:
        h = z + gelu(_conv(z, ahat_groups, w, "conv_a"))
        return h + gelu(_conv(h, ahat_groups, w, "conv_b"))
    if design == TRANSFORMER_STYLE:
        h = z + _conv(_ln(z, w, "ln1"), ahat_groups, w, "conv_a")
        return h + _ffn(_ln(h, w, "ln2"), w, "ffn")
    if design == CONVNEXT_STYLE:
        h = _ln(_conv(z, ahat_groups, w, "conv_a"), w, "ln")
        return z + _ffn(h, w, "ffn")
    raise ConfigError(f"unknown GCN block design {design!r}; expected one of {BLOCK_DESIGNS}")


def _conv_spec(prefix: str, d: int) -> dict[str, tuple[tuple[int, ...], str]]:
    spec = {f"{prefix}.theta{k}": ((d, d), "weight") for k in (1, 2, 3)}
    spec[f"{prefix}.bias"] = ((d,), "bias")
    return spec


def _ln_spec(prefix: str, d: int):
    return {f"{prefix}.gamma": ((d,), "ones"), f"{prefix}.beta": ((d,), "zeros")}


def _ffn_spec(prefix: str, d: int, hidden: int):
    return {
        f"{prefix}.fc1.weight": ((d, hidden), "weight"),
        f"{prefix}.fc1.bias": ((hidden,), "bias"),
        f"{prefix}.fc2.weight": ((hidden, d), "weight"),
        f"{prefix}.fc2.bias": ((d,), "bias"),
    }


def gcn_block_spec(design: str, d: int, ffn_ratio: int = 1) -> dict[str, tuple[tuple[int, ...], str]]:
    """Parameter names, shapes and init kinds for one block."""
    if design in (PRIMARY, TWO_RESIDUAL):
        return {**_conv_spec("conv_a", d), **_conv_spec("conv_b", d)}
    hidden = ffn_ratio * d
    if design == TRANSFORMER_STYLE:
        return {**_ln_spec("ln1", d), **_conv_spec("conv_a", d), **_ln_spec("ln2", d), **_ffn_spec("ffn", d, hidden)}
    if design == CONVNEXT_STYLE:
        return {**_conv_spec("conv_a", d), **_ln_spec("ln", d), **_ffn_spec("ffn", d, hidden)}
    raise ConfigError(f"unknown GCN block design {design!r}; expected one of {BLOCK_DESIGNS}")


def gcn_block_macs(design: str, joints: int, d: int, ffn_ratio: int = 1) -> dict[str, int]:
    """Multiply-accumulates of one block for a single pose, dense adjacency."""
    # per grouped conv: three X@theta products plus three J x J aggregations
    conv = {"project": 3 * joints * d * d, "aggregate": 3 * joints * joints * d}
    if design in (PRIMARY, TWO_RESIDUAL):
        return {f"conv_a.{k}": v for k, v in conv.items()} | {f"conv_b.{k}": v for k, v in conv.items()}
    if design in (TRANSFORMER_STYLE, CONVNEXT_STYLE):
        out = {f"conv_a.{k}": v for k, v in conv.items()}
        out["ffn"] = 2 * joints * d * ffn_ratio * d
        return out
    raise ConfigError(f"unknown GCN block design {design!r}; expected one of {BLOCK_DESIGNS}")
