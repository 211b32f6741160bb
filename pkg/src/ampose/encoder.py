"""Pre-LN transformer encoder over joint tokens."""

from __future__ import annotations

import math
from typing import Callable, Mapping

from .graphconv import ConfigError
from .numerics import DimensionError, Tensor, gelu, layer_norm, matmul, reshape, softmax_rows, swap_last, transpose

PER_HEAD = "per_head"
FULL_WIDTH = "full"


def scaled_dot_attention(q, k, v, scale_dim: int | None = None, return_weights: bool = False):
    """softmax(q k^T / sqrt(scale_dim)) v over the last two axes.

    ``scale_dim`` defaults to the width of ``q``.
    """
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / math.sqrt(scale_dim or q.shape[-1])
    weights = softmax_rows(matmul(q, swap_last(k)) * scale)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return reshape(transpose(x, axes), (*lead, n, h * dh))


def msa(z, w: Mapping[str, Tensor], num_heads: int, scaling: str = PER_HEAD) -> Tensor:
    """Multi-head self attention: project, split channels into heads, attend, merge, project."""
    d = z.shape[-1]
    if d % num_heads:
        raise ConfigError(f"channels {d} not divisible by {num_heads} heads")
    if scaling not in (PER_HEAD, FULL_WIDTH):
        raise ConfigError(f"unknown attention scaling {scaling!r}")
    q = matmul(z, w["wq"]) + w["bq"]
    k = matmul(z, w["wk"])  # a key bias only shifts each score row by a constant, so none
    v = matmul(z, w["wv"]) + w["bv"]
    scale_dim = d // num_heads if scaling == PER_HEAD else d
    heads = scaled_dot_attention(_split_heads(q, num_heads), _split_heads(k, num_heads), _split_heads(v, num_heads), scale_dim)
    return matmul(_merge_heads(heads), w["wout"]) + w["bout"]


def mlp(z, w: Mapping[str, Tensor]) -> Tensor:
    h = gelu(matmul(z, w["fc1.weight"]) + w["fc1.bias"])
    return matmul(h, w["fc2.weight"]) + w["fc2.bias"]


def encoder_forward(
    z0,
    w: Mapping[str, Tensor],
    num_heads: int,
    scaling: str = PER_HEAD,
    dropout: Callable[[Tensor], Tensor] | None = None,
) -> Tensor:
    """Add the positional embedding, then pre-LN attention and MLP sublayers with residuals.

    ``dropout``, if given, is applied to each sublayer output before its residual add.
    """
    if tuple(w["pos"].shape) != tuple(z0.shape[-2:]):
        raise DimensionError(f"positional embedding {w['pos'].shape} does not match input {z0.shape}")
    drop = dropout or (lambda t: t)
    z1 = z0 + w["pos"]
    z2 = drop(msa(layer_norm(z1, w["ln1.gamma"], w["ln1.beta"]), w, num_heads, scaling)) + z1
    return drop(mlp(layer_norm(z2, w["ln2.gamma"], w["ln2.beta"]), w)) + z2


def encoder_spec(joints: int, d: int, mlp_ratio: int) -> dict[str, tuple[tuple[int, ...], str]]:
    spec: dict[str, tuple[tuple[int, ...], str]] = {"pos": ((joints, d), "zeros")}
    spec |= {"ln1.gamma": ((d,), "ones"), "ln1.beta": ((d,), "zeros")}
    for name in ("q", "k", "v", "out"):
        spec[f"w{name}"] = ((d, d), "weight")
        if name != "k":
            spec[f"b{name}"] = ((d,), "bias")
    spec |= {"ln2.gamma": ((d,), "ones"), "ln2.beta": ((d,), "zeros")}
    hidden = mlp_ratio * d
    spec |= {
        "fc1.weight": ((d, hidden), "weight"),
        "fc1.bias": ((hidden,), "bias"),
        "fc2.weight": ((hidden, d), "weight"),
        "fc2.bias": ((d,), "bias"),
    }
    return spec


def encoder_macs(joints: int, d: int, mlp_ratio: int) -> dict[str, int]:
    return {
        "qkv": 3 * joints * d * d,
        "scores": joints * joints * d,
        "context": joints * joints * d,
        "out": joints * d * d,
        "mlp": 2 * joints * d * mlp_ratio * d,
    }
