"""Layer-wise probing: decode intermediate representations with the
model's own scalar read-out plus a per-task, per-layer affine correction
fitted on validation tokens.

For each task, prompts (x_1, y_1, ..., x_k, y_k, x_j) are fed separately
for j = k+1 .. k+m+n; the first m probe tokens fit (a_l, b_l) by least
squares and the remaining n score the calibrated predictions. Errors are
normalized by the input dimension.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .baselines import gd_iterates, gd_pp_iterates
from .checkpoint import atomic_write_text
from .errors import ConfigError, ContractError
from .tasks import encode_prompt, sample_task, task_rng

SCHEMA_VERSION = 1

PROBE_COLUMNS = [
    "schema_version",
    "model",
    "distribution",
    "k",
    "layer_index",
    "layer_ratio",
    "calibrated_mse_over_d",
    "a_mean",
    "a_var",
    "b_mean",
    "b_var",
]

GD_TABLE_COLUMNS = ["schema_version", "source", "index", "ratio", "mse_over_d"]


@dataclass
class ProbeConfig:
    k: int
    m: int = 10  # validation tokens per task (affine fit)
    n: int = 40  # test tokens per task
    n_tasks: int = 128
    tap: str = "decoder_input"  # or "post_block": skip the final norm

    def validate(self):
        if self.m < 2:
            raise ConfigError("affine fit needs m >= 2 validation tokens")
        if self.n < 1 or self.k < 1 or self.n_tasks < 1:
            raise ConfigError("k, n, n_tasks must be >= 1")
        if self.tap not in ("decoder_input", "post_block"):
            raise ConfigError(f"unknown tap {self.tap!r}")
        return self


@dataclass
class ProbeCurve:
    model: str
    distribution: str
    k: int
    depth: int
    calibrated_mse_over_d: np.ndarray  # (depth,)
    a_mean: np.ndarray
    a_var: np.ndarray
    b_mean: np.ndarray
    b_var: np.ndarray

    def layer_ratios(self):
        return (np.arange(self.depth) + 1) / self.depth

    def u_shape_ratio(self):
        """final-layer error over the best interior-layer error; values
        well above 1 flag the U-shape regime."""
        if self.depth < 3:
            return 1.0
        interior = self.calibrated_mse_over_d[:-1].min()
        return float(self.calibrated_mse_over_d[-1] / max(interior, 1e-300))


def fit_affine(y_tilde, y):
    """1-D least squares y ~ a*y_tilde + b; degenerate variance falls back
    to the constant predictor (0, mean(y))."""
    y_tilde = np.asarray(y_tilde, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y_tilde) < 2:
        raise ConfigError("affine fit needs at least 2 points")
    mt = y_tilde.mean()
    my = y.mean()
    var = ((y_tilde - mt) ** 2).mean()
    if var < 1e-12:
        return 0.0, float(my)
    cov = ((y_tilde - mt) * (y - my)).mean()
    a = cov / var
    return float(a), float(my - a * mt)


def probe_task(model, dist, cfg, rng):
    """Sample one task with k + m + n points and collect, per layer, the
    query-position representations of the m + n probe prompts.

    Returns (z: (depth, m+n, D), y_tilde: (depth, m+n), ys: (m+n,)).
    """
    total = cfg.k + cfg.m + cfg.n
    inst = sample_task(dist.kind, dist.d, total - 1, rng, **dist.sampler_kwargs())
    ctx_x = inst.xs[: cfg.k]
    ctx_y = inst.ys[: cfg.k]
    probe_x = inst.xs[cfg.k :]
    probe_y = inst.ys[cfg.k :]
    base = encode_prompt(np.vstack([ctx_x, ctx_x[:1]]), np.append(ctx_y, 0.0))
    prompts = np.repeat(base[None, :, :], len(probe_x), axis=0)
    prompts[:, -1, :] = probe_x
    with ad.no_grad():
        out, hidden = model.forward_tokens(prompts.astype(model.spec.np_dtype()), collect_hidden=True)
    z = np.stack([h[:, -1, :] for h in hidden])  # (depth, m+n, D)
    y_tilde = np.stack([model.decode_hidden(z[l], tap=cfg.tap) for l in range(len(hidden))])
    return z, y_tilde, probe_y, out.data[:, -1]


def probe_curve(model, dist, cfg, seed, model_name="model"):
    """Mean calibrated test error per layer over n_tasks tasks, plus the
    across-task statistics of the fitted scale/shift."""
    cfg.validate()
    depth = model.spec.depth
    errs = np.zeros((cfg.n_tasks, depth))
    a_all = np.zeros((cfg.n_tasks, depth))
    b_all = np.zeros((cfg.n_tasks, depth))
    for t in range(cfg.n_tasks):
        rng = task_rng(seed, "probe", dist.kind, cfg.k, t)
        _, y_tilde, ys, _ = probe_task(model, dist, cfg, rng)
        for l in range(depth):
            a, b = fit_affine(y_tilde[l, : cfg.m], ys[: cfg.m])
            pred = a * y_tilde[l, cfg.m :] + b
            errs[t, l] = np.mean((pred - ys[cfg.m :]) ** 2) / dist.d
            a_all[t, l] = a
            b_all[t, l] = b
    return ProbeCurve(
        model=model_name,
        distribution=dist.kind,
        k=cfg.k,
        depth=depth,
        calibrated_mse_over_d=errs.mean(axis=0),
        a_mean=a_all.mean(axis=0),
        a_var=a_all.var(axis=0),
        b_mean=b_all.mean(axis=0),
        b_var=b_all.var(axis=0),
    )


def probe_extrapolation(model, dist, k_values, cfg, seed, model_name="model"):
    """One probe curve per context length; k_values must include the
    training length so the base curve is reproduced exactly."""
    curves = {}
    for k in k_values:
        cfg_k = ProbeConfig(k=k, m=cfg.m, n=cfg.n, n_tasks=cfg.n_tasks, tap=cfg.tap)
        curves[k] = probe_curve(model, dist, cfg_k, seed, model_name=model_name)
    return curves


def gd_reference_errors(dist, cfg, seed, steps, gamma=None):
    """GD (and GD++ when gamma is given) iterate errors on the same probe
    tasks: per iteration, mean over tasks of the normalized test error."""
    errs = np.zeros((cfg.n_tasks, steps))
    for t in range(cfg.n_tasks):
        rng = task_rng(seed, "probe", dist.kind, cfg.k, t)
        total = cfg.k + cfg.m + cfg.n
        inst = sample_task(dist.kind, dist.d, total - 1, rng, **dist.sampler_kwargs())
        X = inst.xs[: cfg.k]
        y = inst.ys[: cfg.k]
        test_x = inst.xs[cfg.k + cfg.m :]
        test_y = inst.ys[cfg.k + cfg.m :]
        if gamma is None:
            preds = gd_iterates(X, y, test_x, steps)
        else:
            preds = gd_pp_iterates(X, y, test_x, steps, gamma)
        errs[t] = np.mean((preds - test_y[None, :]) ** 2, axis=1) / dist.d
    return errs.mean(axis=0)


def compare_gd(curves, gd_errors, gd_pp_errors=None):
    """Align probe curves (layer-ratio axis) with GD iterate errors
    (iteration-ratio axis) into one table; both axes span (0, 1]."""
    rows = []
    for curve in curves:
        if len(gd_errors) != curve.depth:
            raise ContractError(
                f"gd iterate count {len(gd_errors)} != model depth {curve.depth}"
            )
        ratios = curve.layer_ratios()
        for i in range(curve.depth):
            rows.append((curve.model, i + 1, float(ratios[i]), float(curve.calibrated_mse_over_d[i])))
    for name, seq in (("gd", gd_errors), ("gd_pp", gd_pp_errors)):
        if seq is None:
            continue
        n = len(seq)
        for i, e in enumerate(seq):
            rows.append((name, i + 1, float((i + 1) / n), float(e)))
    return rows


# -- persistence -------------------------------------------------------------------


def curves_to_csv_text(curves):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROBE_COLUMNS)
    for c in curves:
        ratios = c.layer_ratios()
        for l in range(c.depth):
            w.writerow(
                [
                    SCHEMA_VERSION,
                    c.model,
                    c.distribution,
                    c.k,
                    l + 1,
                    repr(float(ratios[l])),
                    repr(float(c.calibrated_mse_over_d[l])),
                    repr(float(c.a_mean[l])),
                    repr(float(c.a_var[l])),
                    repr(float(c.b_mean[l])),
                    repr(float(c.b_var[l])),
                ]
            )
    return buf.getvalue()


def write_probe_csv(path, curves):
    atomic_write_text(path, curves_to_csv_text(curves))


def gd_table_to_csv_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GD_TABLE_COLUMNS)
    for source, index, ratio, err in rows:
        w.writerow([SCHEMA_VERSION, source, index, repr(ratio), repr(err)])
    return buf.getvalue()


def write_gd_table_csv(path, rows):
    atomic_write_text(path, gd_table_to_csv_text(rows))
