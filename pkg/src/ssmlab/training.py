"""Training loop (curriculum + cosine annealing) and the evaluation
harness producing error-vs-context-length records.

Training minimizes the prompt MSE over all k+1 prediction positions;
evaluation scores the query position only and reports MSE divided by the
input dimension. Metric rows are persisted as CSV (one schema, versioned)
and every run writes a JSON manifest.
"""

import csv
import hashlib
import io
import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .baselines import BASELINES
from .checkpoint import atomic_write_text
from .errors import ConfigError, NumericsError
from .models import ModelSpec, SequenceModel, build
from .optim import Adam
from .tasks import CurriculumSchedule, curriculum, prompts_from_tasks, sample_batch

SCHEMA_VERSION = 1

EVAL_COLUMNS = [
    "schema_version",
    "model",
    "family",
    "distribution",
    "transform",
    "k",
    "k_train",
    "seed",
    "n_tasks",
    "mse_over_d",
]

LOSS_COLUMNS = ["schema_version", "step", "loss", "lr", "dims", "k"]


@dataclass
class DistributionSettings:
    kind: str
    d: int
    r: int = 20  # relu_nn hidden width
    s: int = 3  # sparse support size
    noise_std: float = 1.0

    def sampler_kwargs(self):
        return {"r": self.r, "s": self.s, "noise_std": self.noise_std}


@dataclass
class TrainSettings:
    total_steps: int
    lr: float
    batch_size: int = 64
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    scan_mode: str = "fused"  # mamba blocks: fused sequential or parallel scan
    curriculum: CurriculumSchedule | None = None

    def validate(self):
        if self.batch_size < 1 or self.total_steps < 1 or self.lr <= 0:
            raise ConfigError("batch_size, total_steps must be >= 1 and lr > 0")
        if self.curriculum is not None:
            self.curriculum.validate()
        return self


@dataclass
class TrainConfig:
    model: ModelSpec
    distribution: DistributionSettings
    train: TrainSettings
    k_train: int = 10

    def validate(self):
        self.model.validate()
        self.train.validate()
        if self.model.input_dim != self.distribution.d:
            raise ConfigError(
                f"model input_dim {self.model.input_dim} != distribution d {self.distribution.d}"
            )
        sched = self.train.curriculum
        if sched is not None and (sched.end_dims != self.distribution.d or sched.end_k != self.k_train):
            raise ConfigError("curriculum must end at (d, k_train)")
        return self


@dataclass
class EvalRecord:
    model: str
    family: str
    distribution: str
    transform: str
    k: int
    k_train: int
    seed: int
    n_tasks: int
    mse_over_d: float


def cosine_lr(step, total_steps, lr0):
    """Cosine annealing from lr0 at step 0 to 0 at total_steps."""
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * min(step, total_steps) / total_steps))


def transform_tag(transform):
    if transform is None:
        return "none"
    if transform["kind"] in ("x_scale", "y_scale"):
        return f"{transform['kind']}:{transform['c']}"
    return transform["kind"]


@dataclass
class TrainResult:
    model: SequenceModel
    loss_rows: list
    final_loss: float


def train(cfg, on_step=None):
    """Run the training loop; returns the trained model plus the loss log.

    Each step samples a fresh batch of prompts under the current
    curriculum phase, averages the per-position squared error over the
    batch, and applies one cosine-annealed Adam step. A non-finite loss
    aborts with the offending batch identified.
    """
    cfg.validate()
    model = build(cfg.model, seed=cfg.train.seed)
    model.set_mode(lti_mode="conv", scan_mode="fused" if cfg.train.scan_mode == "fused" else "parallel")
    opt = Adam(model.params(), lr=cfg.train.lr)
    sched = cfg.train.curriculum or CurriculumSchedule.constant(cfg.distribution.d, cfg.k_train)
    dist = cfg.distribution
    rows = []
    loss_val = float("nan")
    for step in range(cfg.train.total_steps):
        dims, k = curriculum(step, sched)
        tasks = sample_batch(
            dist.kind,
            dist.d,
            k,
            cfg.train.batch_size,
            seed=cfg.train.seed,
            batch_index=step,
            active_dims=dims,
            **dist.sampler_kwargs(),
        )
        prompts, targets = prompts_from_tasks(tasks)
        preds = model.forward_prompt(prompts)
        err = preds - Tensor(targets.astype(model.spec.np_dtype()))
        loss = (err * err).mean()
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise NumericsError(
                f"non-finite loss at step {step} (seed {cfg.train.seed}, batch_index {step}, "
                f"curriculum dims={dims} k={k})"
            )
        lr_t = cosine_lr(step, cfg.train.total_steps, cfg.train.lr)
        opt.zero_grad()
        backward(loss)
        opt.step(lr=lr_t)
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "step": step,
                "loss": loss_val,
                "lr": lr_t,
                "dims": dims,
                "k": k,
            }
        )
        if on_step is not None:
            on_step(step, rows[-1], model)
    return TrainResult(model=model, loss_rows=rows, final_loss=loss_val)


# -- evaluation --------------------------------------------------------------------


def _model_query_errors(model, tasks, chunk=64):
    prompts, targets = prompts_from_tasks(tasks)
    preds = np.empty(len(tasks))
    with ad.no_grad():
        for lo in range(0, len(tasks), chunk):
            out = model.forward_prompt(prompts[lo : lo + chunk])
            preds[lo : lo + chunk] = out.data[:, -1]
    return (preds - targets[:, -1]) ** 2


def _baseline_query_errors(name, tasks, dist):
    fn = BASELINES[name]
    errs = np.empty(len(tasks))
    for i, t in enumerate(tasks):
        X, y = t.context()
        xq, yq = t.query()
        kw = {}
        if name == "nn2_gd":
            kw = {"r": dist.r, "seed": 0}
        pred = fn(X, y, xq[None, :], **kw)
        errs[i] = (np.asarray(pred).reshape(-1)[0] - yq) ** 2
    return errs


def evaluate(
    model,
    dist,
    k_values,
    n_tasks,
    seed,
    transform=None,
    baselines=(),
    model_name="model",
    k_train=0,
    threads=1,
    chunk=64,
    record_seed=None,
):
    """Fresh-task query-position evaluation at each context length.

    Baselines run on the identical task draws so model-vs-baseline curves
    share tasks. Returns a list of EvalRecord (normalized by d). The
    model's records are tagged with ``record_seed`` (the training run's
    identity, for per-seed figure lines) when given, the sampling seed
    otherwise.
    """
    dist_kwargs = dist.sampler_kwargs()
    tag = transform_tag(transform)
    rec_seed = seed if record_seed is None else record_seed
    records = []

    def one_k(k):
        tasks = sample_batch(
            dist.kind,
            dist.d,
            k,
            n_tasks,
            seed=seed,
            batch_index=k,
            transform=transform,
            **dist_kwargs,
        )
        out = []
        if model is not None:
            errs = _model_query_errors(model, tasks, chunk=chunk)
            out.append(
                EvalRecord(
                    model_name,
                    model.spec.family,
                    dist.kind,
                    tag,
                    k,
                    k_train,
                    rec_seed,
                    n_tasks,
                    float(errs.mean() / dist.d),
                )
            )
        for name in baselines:
            errs = _baseline_query_errors(name, tasks, dist)
            out.append(
                EvalRecord(
                    name, "baseline", dist.kind, tag, k, k_train, seed, n_tasks, float(errs.mean() / dist.d)
                )
            )
        return out

    if model is not None:
        model.set_mode(lti_mode="recurrent")
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for recs in pool.map(one_k, k_values):
                    records.extend(recs)
        else:
            for k in k_values:
                records.extend(one_k(k))
    finally:
        if model is not None:
            model.set_mode(lti_mode="conv")
    return records


def extrapolation_sweep(model, dist, k_train, k_max, n_tasks, seed, baselines=(), model_name="model", threads=1, record_seed=None):
    """Evaluate k = 1..k_max (beyond the training length) and compute the
    degradation statistic error(2 k_train) / error(k_train) per model."""
    if k_max <= k_train:
        raise ConfigError("extrapolation needs k_max > k_train")
    records = evaluate(
        model,
        dist,
        list(range(1, k_max + 1)),
        n_tasks,
        seed,
        baselines=baselines,
        model_name=model_name,
        k_train=k_train,
        threads=threads,
        record_seed=record_seed,
    )
    degradation = {}
    if 2 * k_train <= k_max:
        by_model = {}
        for r in records:
            by_model.setdefault(r.model, {})[r.k] = r.mse_over_d
        for name, curve in by_model.items():
            at_train = curve.get(k_train)
            at_double = curve.get(2 * k_train)
            if at_train and at_train > 0 and at_double is not None:
                degradation[name] = at_double / at_train
    return records, degradation


# -- persistence --------------------------------------------------------------------


def records_to_csv_text(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_COLUMNS)
    for r in records:
        writer.writerow(
            [
                SCHEMA_VERSION,
                r.model,
                r.family,
                r.distribution,
                r.transform,
                r.k,
                r.k_train,
                r.seed,
                r.n_tasks,
                repr(r.mse_over_d),
            ]
        )
    return buf.getvalue()


def write_eval_csv(path, records):
    atomic_write_text(path, records_to_csv_text(records))


def write_loss_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_COLUMNS)
    for r in rows:
        writer.writerow([r["schema_version"], r["step"], repr(r["loss"]), repr(r["lr"]), r["dims"], r["k"]])
    atomic_write_text(path, buf.getvalue())


def config_hash(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def revision_string():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def build_manifest(command, config_doc, seed, started, outputs, extra=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config_doc,
        "config_hash": config_hash(config_doc),
        "seed": seed,
        "started_at": started,
        "finished_at": time.time(),
        "wall_time_s": time.time() - started,
        "revision": revision_string(),
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc.update(extra)
    return doc


def write_manifest(path, manifest):
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
