"""Command-line entry point: train / eval / probe / selftest / gen-fixtures.

Exit codes: 0 ok, 1 selftest failure, 2 usage or config error,
3 numerical abort (non-finite loss). The default output directory comes
from SSMLAB_OUT (falling back to ./runs).
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import load_train_config, train_config_to_dict
from .errors import ConfigError, NumericsError
from .models import SequenceModel
from .probing import (
    ProbeConfig,
    compare_gd,
    gd_reference_errors,
    probe_curve,
    write_gd_table_csv,
    write_probe_csv,
)
from .selftest import run_selftest
from .tasks import KINDS, sample_batch, save_task_batch
from .training import (
    DistributionSettings,
    build_manifest,
    evaluate,
    extrapolation_sweep,
    train,
    write_eval_csv,
    write_loss_csv,
    write_manifest,
)
from .baselines import gamma_grid_search
from .tasks import sample_batch as _sample_batch


def default_out_dir():
    return os.environ.get("SSMLAB_OUT", "runs")


def parse_k_range(text):
    """'1..20' or comma list '1,2,5,10'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",") if p]


def parse_transform(text):
    if text in (None, "", "none"):
        return None
    if ":" in text:
        kind, c = text.split(":", 1)
        if kind not in ("x_scale", "y_scale"):
            raise ConfigError(f"unknown transform {kind!r}")
        return {"kind": kind, "c": float(c)}
    if text == "add_noise":
        return {"kind": "add_noise"}
    raise ConfigError(f"unknown transform {text!r}")


def cmd_train(args):
    cfg, raw_doc = load_train_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.steps is not None:
        cfg.train.total_steps = args.steps
    out_dir = args.out or os.path.join(default_out_dir(), f"train-{int(time.time())}")
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    t_log = time.time()

    def on_step(step, row, model):
        nonlocal t_log
        if time.time() - t_log > 10 or step == 0:
            print(f"step {step:6d}  loss {row['loss']:.4f}  lr {row['lr']:.2e}  (dims {row['dims']}, k {row['k']})")
            t_log = time.time()
        if cfg.train.checkpoint_every and (step + 1) % cfg.train.checkpoint_every == 0:
            model.save(os.path.join(out_dir, f"checkpoint-{step + 1}.bin"), extra_meta={"step": step + 1, "k_train": cfg.k_train})

    result = train(cfg, on_step=on_step)
    print(f"model parameters: {result.model.num_params()}")
    ckpt = os.path.join(out_dir, "model.bin")
    result.model.save(ckpt, extra_meta={"k_train": cfg.k_train, "distribution": cfg.distribution.kind})
    loss_csv = os.path.join(out_dir, "loss.csv")
    write_loss_csv(loss_csv, result.loss_rows)
    manifest = build_manifest(
        "train", train_config_to_dict(cfg), cfg.train.seed, started, [ckpt, loss_csv],
        extra={"final_loss": result.final_loss},
    )
    write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    print(f"final loss {result.final_loss:.5f}; wrote {ckpt}")
    return 0


def _load_model(path):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return SequenceModel.load(path)


def _dist_from_args(args, meta_kind=None):
    kind = args.distribution or meta_kind
    if kind is None:
        raise ConfigError("no --distribution given and none recorded in the checkpoint")
    if kind not in KINDS:
        raise ConfigError(f"unknown distribution {kind!r}; expected one of {KINDS}")
    return DistributionSettings(kind=kind, d=args.d, r=args.r, s=args.s)


def cmd_eval(args):
    started = time.time()
    model = None
    meta = {}
    if args.checkpoint != "none":
        model = _load_model(args.checkpoint)
        from .checkpoint import load_arrays

        _, meta = load_arrays(args.checkpoint)
    if model is not None:
        args.d = model.spec.input_dim
    dist = _dist_from_args(args, meta.get("distribution"))
    k_train = args.k_train if args.k_train is not None else int(meta.get("k_train", 0))
    transform = parse_transform(args.transform)
    k_values = parse_k_range(args.k_range)
    baselines = [b for b in (args.baselines or "").split(",") if b]
    out_dir = args.out or os.path.join(default_out_dir(), f"eval-{int(time.time())}")
    os.makedirs(out_dir, exist_ok=True)
    record_seed = meta.get("seed")
    extra = {}
    if args.extrapolation:
        records, degradation = extrapolation_sweep(
            model, dist, k_train, max(k_values), args.n_tasks, args.seed,
            baselines=baselines, model_name=args.model_name, threads=args.threads,
            record_seed=record_seed,
        )
        extra["degradation_at_2x_k_train"] = degradation
        for name, ratio in degradation.items():
            print(f"degradation error(2*k_train)/error(k_train) for {name}: {ratio:.3f}")
    else:
        records = evaluate(
            model, dist, k_values, args.n_tasks, args.seed,
            transform=transform, baselines=baselines,
            model_name=args.model_name, k_train=k_train, threads=args.threads,
            record_seed=record_seed,
        )
    csv_path = os.path.join(out_dir, "eval.csv")
    write_eval_csv(csv_path, records)
    manifest = build_manifest(
        "eval",
        {
            "checkpoint": args.checkpoint,
            "distribution": dist.kind,
            "d": dist.d,
            "transform": args.transform,
            "k_values": k_values,
            "n_tasks": args.n_tasks,
            "seed": args.seed,
            "baselines": baselines,
        },
        args.seed,
        started,
        [csv_path],
        extra=extra,
    )
    write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    print(f"wrote {csv_path} ({len(records)} records)")
    return 0


def cmd_probe(args):
    started = time.time()
    model = _load_model(args.checkpoint)
    from .checkpoint import load_arrays

    _, meta = load_arrays(args.checkpoint)
    args.d = model.spec.input_dim
    dist = _dist_from_args(args, meta.get("distribution"))
    out_dir = args.out or os.path.join(default_out_dir(), f"probe-{int(time.time())}")
    os.makedirs(out_dir, exist_ok=True)
    k_list = [int(p) for p in args.k_list.split(",") if p]
    curves = []
    outputs = []
    for k in k_list:
        cfg = ProbeConfig(k=k, m=args.m, n=args.n, n_tasks=args.n_tasks, tap=args.tap)
        curve = probe_curve(model, dist, cfg, args.seed, model_name=args.model_name)
        curves.append(curve)
        print(
            f"k={k}: final-layer calibrated MSE/d {curve.calibrated_mse_over_d[-1]:.4g}, "
            f"u-shape ratio {curve.u_shape_ratio():.3f}"
        )
    probe_csv = os.path.join(out_dir, "probe.csv")
    write_probe_csv(probe_csv, curves)
    outputs.append(probe_csv)
    if args.with_gd:
        cfg = ProbeConfig(k=k_list[0], m=args.m, n=args.n, n_tasks=args.n_tasks, tap=args.tap)
        steps = model.spec.depth
        gamma = args.gamma
        if gamma is None:
            tasks = _sample_batch(dist.kind, dist.d, cfg.k, 32, seed=args.seed + 1, **dist.sampler_kwargs())
            gamma, _ = gamma_grid_search(tasks, steps)
        gd_errs = gd_reference_errors(dist, cfg, args.seed, steps)
        gdpp_errs = gd_reference_errors(dist, cfg, args.seed, steps, gamma=gamma)
        rows = compare_gd([c for c in curves if c.k == k_list[0]], gd_errs, gdpp_errs)
        gd_csv = os.path.join(out_dir, "gd_table.csv")
        write_gd_table_csv(gd_csv, rows)
        outputs.append(gd_csv)
        print(f"gd/gd++ table written with gamma={gamma:.3g}")
    manifest = build_manifest(
        "probe",
        {
            "checkpoint": args.checkpoint,
            "distribution": dist.kind,
            "k_list": k_list,
            "m": args.m,
            "n": args.n,
            "n_tasks": args.n_tasks,
            "tap": args.tap,
            "seed": args.seed,
            "with_gd": bool(args.with_gd),
        },
        args.seed,
        started,
        outputs,
    )
    write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return 0


def cmd_selftest(args):
    ok = run_selftest()
    return 0 if ok else 1


def cmd_gen_fixtures(args):
    out_dir = args.out or os.path.join(default_out_dir(), "fixtures")
    os.makedirs(out_dir, exist_ok=True)
    for kind in KINDS:
        tasks = sample_batch(kind, args.d, args.k, args.n_tasks, seed=args.seed, r=args.r, s=args.s)
        path = os.path.join(out_dir, f"{kind}.tasks.bin")
        save_task_batch(path, tasks)
        print(f"wrote {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ssmlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and/or baselines")
    e.add_argument("checkpoint", help="model checkpoint path, or 'none' for baselines only")
    e.add_argument("--distribution", default=None)
    e.add_argument("--d", type=int, default=5)
    e.add_argument("--r", type=int, default=20)
    e.add_argument("--s", type=int, default=3)
    e.add_argument("--transform", default="none")
    e.add_argument("--k-range", default="1..20")
    e.add_argument("--k-train", type=int, default=None)
    e.add_argument("--n-tasks", type=int, default=256)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--baselines", default="")
    e.add_argument("--model-name", default="model")
    e.add_argument("--extrapolation", action="store_true")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("probe", help="layer-wise probing of a checkpoint")
    pr.add_argument("checkpoint")
    pr.add_argument("--distribution", default=None)
    pr.add_argument("--d", type=int, default=5)
    pr.add_argument("--r", type=int, default=20)
    pr.add_argument("--s", type=int, default=3)
    pr.add_argument("--k-list", default="10")
    pr.add_argument("--m", type=int, default=10)
    pr.add_argument("--n", type=int, default=40)
    pr.add_argument("--n-tasks", type=int, default=128)
    pr.add_argument("--tap", default="decoder_input", choices=["decoder_input", "post_block"])
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--with-gd", action="store_true")
    pr.add_argument("--gamma", type=float, default=None)
    pr.add_argument("--model-name", default="model")
    pr.add_argument("--out", default=None)
    pr.set_defaults(fn=cmd_probe)

    s = sub.add_parser("selftest", help="run the fast invariant suite")
    s.set_defaults(fn=cmd_selftest)

    g = sub.add_parser("gen-fixtures", help="write task-batch fixture files")
    g.add_argument("--d", type=int, default=5)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--n-tasks", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--r", type=int, default=20)
    g.add_argument("--s", type=int, default=3)
    g.add_argument("--out", default=None)
    g.set_defaults(fn=cmd_gen_fixtures)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"file not found: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
