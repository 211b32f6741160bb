"""Command-line entry point: ``ampose <subcommand> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import copy
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint
from .data import DataError, PoseSample, convert_records, load_dataset, save_dataset, synth_dataset
from .graphconv import ConfigError
from .metrics import MetricError, evaluate
from .model import ModelConfig, build_model, count_flops, count_params, flop_report, forward, param_report
from .numerics import DimensionError, Tensor, backward, finite_diff_check
from .skeleton import SkeletonError, load_skeleton, partition_adjacency
from .training import TrainConfig, mse_loss, predict, restore, train

log = logging.getLogger("ampose")

GRADCHECK_MAX_PARAMS = 20_000
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_PERTURBATION = 0.1

# five joints, one branch point: 0-1-3 and 0-2-4
TINY_SKELETON = {"name": "tiny5", "num_joints": 5, "root": 0, "edges": [[0, 1], [0, 2], [1, 3], [2, 4]]}
TINY_MODEL = {"num_joints": 5, "channels": 8, "depth": 1, "num_heads": 2, "mlp_ratio": 2,
              "output_scale": 1.0, "skeleton": TINY_SKELETON}

BUNDLED_CONFIGS = ("full", "overfit", "tiny")

USER_ERRORS = (ConfigError, DataError, SkeletonError, CheckpointError, MetricError, DimensionError, FileNotFoundError)


class CliError(Exception):
    pass


# configuration

def _set_dotted(cfg: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise CliError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = value


def resolve_config(path: str | None, overrides: Sequence[str], base: dict | None = None) -> dict[str, Any]:
    """File config (sections ``model`` and ``train``) with ``--set key=value`` applied on top."""
    cfg: dict[str, Any] = copy.deepcopy(base) if base else {"model": {}, "train": {}}
    if path:
        p = Path(path)
        if p.exists():
            text = p.read_text()
        elif path in BUNDLED_CONFIGS:
            text = resources.files("ampose.configs").joinpath(f"{path}.yaml").read_text()
        else:
            raise CliError(f"config file not found: {p} (bundled: {', '.join(BUNDLED_CONFIGS)})")
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise CliError(f"config file {p} must hold a mapping")
        for section in ("model", "train"):
            cfg.setdefault(section, {}).update(loaded.get(section) or {})
    for item in overrides:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(cfg, key.strip(), yaml.safe_load(raw))
    return cfg


def _echo(cfg: dict, out: Path | None = None) -> None:
    text = json.dumps(cfg, indent=2, sort_keys=True)
    print("resolved config:\n" + text, file=sys.stderr)
    if out is not None:
        (out / "resolved_config.json").write_text(text + "\n")


@contextlib.contextmanager
def _serial(enabled: bool):
    """Limit BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield


# subcommands

def cmd_train(args) -> int:
    out = Path(args.out)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        base = {"model": resume.model_config, "train": resume.train_config}
    else:
        base = None
    cfg = resolve_config(args.config, args.set, base)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    model_cfg = ModelConfig.from_dict(cfg["model"])
    train_cfg = TrainConfig.from_dict(cfg["train"])
    model_cfg.validate()
    train_cfg.validate()
    skeleton = load_skeleton(model_cfg.skeleton)
    if not args.data:
        raise CliError("train needs --data")
    dataset = load_dataset(args.data, skeleton)
    val = load_dataset(args.val, skeleton, split="val") if args.val else None
    out.mkdir(parents=True, exist_ok=True)
    _echo(cfg, out)
    marker = out / "INCOMPLETE"
    marker.write_text("training did not finish; outputs in this directory are partial\n")
    if resume is None:
        (out / "metrics.jsonl").unlink(missing_ok=True)
        model = build_model(model_cfg, seed=train_cfg.seed)
        state, progress = None, None
    else:
        model, state, _ = restore(resume)
        progress = resume.progress
    with _serial(args.deterministic):
        result = train(model, dataset, train_cfg, val=val, state=state, progress=progress, out_dir=out,
                       save_every_epoch=args.save_every_epoch)
    marker.unlink()
    last = result.metrics[-1] if result.metrics else {}
    print(json.dumps({"checkpoint": str(out / "final.ckpt"), "steps": result.checkpoint.progress["step"], **last}, sort_keys=True))
    return 0


def _load_model(path: str):
    ckpt = load_checkpoint(path)
    model, _, _ = restore(ckpt)
    return model


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    dataset = load_dataset(args.data, model.skeleton, split="test")
    _echo({"model": model.config.to_dict(), "eval": {"pck_mode": args.pck_mode, "identity": args.identity}})
    gt = dataset.targets()
    pred = gt.copy() if args.identity else predict(model, dataset.inputs())
    actions = [s.meta.get("action") for s in dataset.samples]
    report = evaluate(pred, gt, actions if any(actions) else None, pck_mode=args.pck_mode)
    if args.out:
        report.write(args.out)
    print(f"MPJPE {report.mpjpe_mm:.3f} mm  PCK@{report.pck_threshold_mm:g} {report.pck:.4f}  AUC {report.auc:.4f}  (n={report.n_samples})")
    return 0


def cmd_predict(args) -> int:
    model = _load_model(args.checkpoint)
    inputs = load_dataset(args.data, model.skeleton, require_3d=False)
    _echo({"model": model.config.to_dict()})
    pred = predict(model, inputs.inputs())
    # the network's root output is not constrained; re-centre so records stay root-relative
    pred = pred - pred[:, model.skeleton.root : model.skeleton.root + 1, :]
    samples = [PoseSample(s.pose2d, p, s.meta) for s, p in zip(inputs.samples, pred)]
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} predictions to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        cfg = {"model": load_checkpoint(args.checkpoint).model_config}
    else:
        cfg = resolve_config(args.config, args.set)
    model_cfg = ModelConfig.from_dict(cfg["model"])
    model_cfg.validate()
    _echo(cfg)
    skel = load_skeleton(model_cfg.skeleton)
    if skel.num_joints != model_cfg.num_joints:
        raise ConfigError(f"num_joints {model_cfg.num_joints} does not match skeleton ({skel.num_joints})")
    part = partition_adjacency(skel)
    print("parameters:")
    for k, v in param_report(model_cfg).items():
        print(f"  {k:<24} {v:>12,d}")
    n_params = count_params(model_cfg)
    print(f"  {'total':<24} {n_params:>12,d}  ({n_params / 1e6:.2f} M)")
    print("FLOPs (1 MAC = 1 FLOP, matmuls only, one pose):")
    for k, v in flop_report(model_cfg).items():
        print(f"  {k:<32} {v:>12,d}")
    n_flops = count_flops(model_cfg)
    print(f"  {'total':<32} {n_flops:>12,d}  ({n_flops / 1e6:.1f} M)")
    print(f"skeleton {skel.name}: {skel.num_joints} joints, {len(skel.edges)} edges, root {skel.root}")
    print(f"hop {part.hop.tolist()}")
    sizes = [int(g.sum()) for g in part.groups]
    print(f"group sizes (self, closer, further): {sizes}")
    if args.matrices or skel.num_joints <= 8:
        for label, g in zip(("A1 (self)", "A2 (closer)", "A3 (further)"), part.groups):
            print(label)
            for row in g:
                print("  " + " ".join(str(int(v)) for v in row))
    return 0


def gradcheck_report(model_cfg: ModelConfig, seed: int, corrupt: bool = False) -> float:
    """Max relative error of the full-loss gradient against central differences."""
    model = build_model(model_cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # move biases, LN affines and Wpos off their init; larger offsets saturate GELU and leave
    # gradients near 1e-9, below the central-difference noise floor
    params = {k: v + rng.normal(scale=GRADCHECK_PERTURBATION, size=v.shape) for k, v in model.params.items()}
    x = rng.normal(size=(model_cfg.num_joints, 2))
    y = rng.normal(size=(model_cfg.num_joints, 3)) * model_cfg.output_scale

    def f(p):
        return mse_loss(forward(model, x, p), y)

    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    grads = backward(f(leaves), leaves)
    if corrupt:
        name = next(iter(grads))
        grads[name] = grads[name] * 1.01
    return finite_diff_check(f, params, h=1e-5, grads=grads)


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args.config, args.set, {"model": dict(TINY_MODEL), "train": {}})
    model_cfg = ModelConfig.from_dict(cfg["model"])
    model_cfg.validate()
    n = count_params(model_cfg)
    if n > GRADCHECK_MAX_PARAMS:
        raise CliError(
            f"refusing gradcheck on {n:,} parameters (limit {GRADCHECK_MAX_PARAMS:,}); "
            "shrink channels/depth, e.g. --set model.channels=8 --set model.depth=1"
        )
    _echo(cfg)
    seed = 0 if args.seed is None else args.seed
    with _serial(True):
        err = gradcheck_report(model_cfg, seed, corrupt=args.corrupt_gradient)
    ok = err < GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'}: max relative error {err:.3e} over {n} parameters (tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def cmd_synth(args) -> int:
    skel = load_skeleton(args.skeleton)
    seed = 0 if args.seed is None else args.seed
    ds = synth_dataset(seed, args.n, skel)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} synthetic samples ({skel.name}, seed {seed}) to {args.out}")
    return 0


def cmd_convert(args) -> int:
    skel = load_skeleton(args.skeleton)
    ds = convert_records(args.data, skel)
    save_dataset(ds, args.out)
    print(f"converted {len(ds)} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ampose", description="2D-to-3D pose lifting with alternating attention and graph convolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML file with 'model' and 'train' sections, or a bundled name (full, overfit, tiny)")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted override, e.g. model.depth=2")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true", help="single-threaded execution")

    p = subs.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", help="training records (.jsonl)")
    p.add_argument("--val", help="validation records; defaults to the training set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--save-every-epoch", action="store_true")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a checkpoint on labelled records")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--pck-mode", choices=("joint", "pose"), default="joint")
    p.add_argument("--identity", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("predict", help="lift 2D records to 3D")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("inspect", help="parameter/FLOP counts and skeleton partition")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--matrices", action="store_true", help="print partition matrices for any skeleton size")
    p.set_defaults(func=cmd_inspect)

    p = subs.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    common(p)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("synth-data", help="write a synthetic dataset")
    common(p, config=False)
    p.add_argument("--skeleton", default="h36m17")
    p.add_argument("-n", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("convert", help="normalise externally prepared pixel/camera-frame records")
    p.add_argument("--skeleton", default="h36m17")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
