"""Regression task distributions, prompt assembly and the curriculum.

Each sampler draws a latent function f plus k+1 inputs and targets; the
stored instance always satisfies ys[i] == f(xs[i]) (plus noise only for
the noisy kind). Samplers are pure functions of (config, rng stream):
identical seeds give identical instances byte for byte.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import ConfigError

KINDS = (
    "linear",
    "skewed_linear",
    "sparse_linear",
    "noisy_linear",
    "orthants",
    "subspace",
    "relu_nn",
    "tree",
)

LINEAR_FAMILY = KINDS[:6]

TREE_DEPTH = 4
TREE_INTERNAL = 2**TREE_DEPTH - 1  # 15
TREE_LEAVES = 2**TREE_DEPTH  # 16


def task_rng(*parts):
    """Named counter-based stream: deterministic per (seed, indices...)
    so batch parallelism cannot perturb sampling order."""
    ints = tuple(
        zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF for p in parts
    )
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


@dataclass
class TaskInstance:
    kind: str
    d: int
    xs: np.ndarray  # (k+1, d); the last row is the query input
    ys: np.ndarray  # (k+1,)
    latent: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.xs) - 1

    def context(self):
        return self.xs[:-1], self.ys[:-1]

    def query(self):
        return self.xs[-1], self.ys[-1]


def eval_latent(inst, x):
    """Re-evaluate the latent function on inputs x: (..., d) -> (...,).
    Noise is not re-applied; for the noisy kind this returns w.x."""
    lat = inst.latent
    if "w" in lat:
        return np.asarray(x) @ lat["w"]
    if "alpha" in lat:
        pre = np.asarray(x) @ lat["wmat"].T
        return np.maximum(pre, 0.0) @ lat["alpha"]
    if "tree_coords" in lat:
        return _tree_eval(lat["tree_coords"], lat["tree_leaves"], np.atleast_2d(x))
    raise ConfigError(f"cannot evaluate latent of kind {inst.kind!r}")


def _tree_eval(coords, leaves, X):
    # heap-indexed full binary tree; right child on strictly positive coordinate
    idx = np.zeros(len(X), dtype=np.int64)
    for _ in range(TREE_DEPTH):
        go_right = X[np.arange(len(X)), coords[idx]] > 0
        idx = 2 * idx + 1 + go_right
    return leaves[idx - TREE_INTERNAL]


def _zero_inactive(xs, active_dims, d):
    if active_dims is not None and active_dims < d:
        xs[:, active_dims:] = 0.0
    return xs


def sample_task(kind, d, k, rng, active_dims=None, r=20, s=3, noise_std=1.0):
    """Draw one TaskInstance of the given kind with k context pairs.

    active_dims zeroes trailing input coordinates (curriculum phases);
    r is the hidden width of the ReLU network kind; s the sparsity level.
    """
    if d < 1 or k < 1:
        raise ConfigError(f"d and k must be >= 1, got d={d}, k={k}")
    if kind == "linear":
        w = rng.standard_normal(d)
        xs = _zero_inactive(rng.standard_normal((k + 1, d)), active_dims, d)
        return TaskInstance(kind, d, xs, xs @ w, {"w": w})
    if kind == "skewed_linear":
        w = rng.standard_normal(d)
        u, _, _ = np.linalg.svd(rng.standard_normal((d, d)))
        basis = (u * (1.0 / np.arange(1, d + 1) ** 2)) @ u.T
        xs = rng.standard_normal((k + 1, d)) @ basis.T
        xs = _zero_inactive(xs, active_dims, d)
        return TaskInstance(kind, d, xs, xs @ w, {"w": w, "basis": basis})
    if kind == "sparse_linear":
        if d < s:
            raise ConfigError(f"sparse kind needs d >= s = {s}, got d={d}")
        w = rng.standard_normal(d)
        keep = rng.choice(d, size=s, replace=False)
        mask = np.zeros(d, dtype=bool)
        mask[keep] = True
        w[~mask] = 0.0
        xs = _zero_inactive(rng.standard_normal((k + 1, d)), active_dims, d)
        return TaskInstance(kind, d, xs, xs @ w, {"w": w, "support": np.sort(keep)})
    if kind == "noisy_linear":
        w = rng.standard_normal(d)
        xs = _zero_inactive(rng.standard_normal((k + 1, d)), active_dims, d)
        eps = rng.standard_normal(k + 1) * noise_std
        return TaskInstance(kind, d, xs, xs @ w + eps, {"w": w, "eps": eps})
    if kind == "orthants":
        # all context points share one sign pattern; the query draws its own
        w = rng.standard_normal(d)
        signs = np.where(rng.random(d) < 0.5, -1.0, 1.0)
        q_signs = np.where(rng.random(d) < 0.5, -1.0, 1.0)
        xs = np.abs(rng.standard_normal((k + 1, d)))
        xs[:-1] *= signs
        xs[-1] *= q_signs
        xs = _zero_inactive(xs, active_dims, d)
        return TaskInstance(kind, d, xs, xs @ w, {"w": w, "signs": signs, "q_signs": q_signs})
    if kind == "subspace":
        w = rng.standard_normal(d)
        xs = rng.standard_normal((k + 1, d))
        half = int(np.ceil(d / 2))
        xs[:, half:] = 0.0
        xs = _zero_inactive(xs, active_dims, d)
        return TaskInstance(kind, d, xs, xs @ w, {"w": w})
    if kind == "relu_nn":
        if r < 1:
            raise ConfigError("relu_nn needs r >= 1")
        alpha = rng.standard_normal(r) * np.sqrt(2.0 / r)
        wmat = rng.standard_normal((r, d))
        xs = _zero_inactive(rng.standard_normal((k + 1, d)), active_dims, d)
        ys = np.maximum(xs @ wmat.T, 0.0) @ alpha
        return TaskInstance(kind, d, xs, ys, {"alpha": alpha, "wmat": wmat})
    if kind == "tree":
        coords = rng.integers(0, d, size=TREE_INTERNAL)
        leaves = rng.standard_normal(TREE_LEAVES)
        xs = _zero_inactive(rng.standard_normal((k + 1, d)), active_dims, d)
        ys = _tree_eval(coords, leaves, xs)
        return TaskInstance(kind, d, xs, ys, {"tree_coords": coords, "tree_leaves": leaves})
    raise ConfigError(f"unknown task kind {kind!r}; expected one of {KINDS}")


# -- out-of-distribution transforms ----------------------------------------------


def apply_ood_transform(inst, transform, rng=None):
    """OOD eval transforms for linear-family tasks.

    x_scale: scale inputs by c, recompute targets; y_scale: scale targets;
    add_noise: unit Gaussian noise on the context targets only.
    """
    if transform is None:
        return inst
    kind = transform["kind"]
    if inst.kind not in LINEAR_FAMILY:
        raise ConfigError(f"transform {kind!r} applies to linear-family tasks, not {inst.kind!r}")
    if kind == "x_scale":
        xs = inst.xs * float(transform["c"])
        return TaskInstance(inst.kind, inst.d, xs, xs @ inst.latent["w"], dict(inst.latent))
    if kind == "y_scale":
        return TaskInstance(
            inst.kind, inst.d, inst.xs.copy(), inst.ys * float(transform["c"]), dict(inst.latent)
        )
    if kind == "add_noise":
        if rng is None:
            raise ConfigError("add_noise transform needs an rng")
        ys = inst.ys.copy()
        ys[:-1] += rng.standard_normal(len(ys) - 1)
        return TaskInstance(inst.kind, inst.d, inst.xs.copy(), ys, dict(inst.latent))
    raise ConfigError(f"unknown transform {kind!r}")


# -- prompts ----------------------------------------------------------------------


def encode_prompt(xs, ys):
    """Interleave (x_1, y_1, ..., x_k, y_k, x_{k+1}) into a (2k+1, d) token
    array; scalar targets are embedded as (y, 0, ..., 0) d-vectors."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    k = len(xs) - 1
    tokens = np.zeros((2 * k + 1, xs.shape[1]), dtype=xs.dtype)
    tokens[0::2] = xs
    tokens[1::2, 0] = ys[:k]
    return tokens


def prompts_from_tasks(tasks):
    """Stack equally-sized tasks into (n, 2k+1, d) prompts plus the
    (n, k+1) target matrix (queries included at the last column)."""
    prompts = np.stack([encode_prompt(t.xs, t.ys) for t in tasks])
    targets = np.stack([t.ys for t in tasks])
    return prompts, targets


def sample_batch(kind, d, k, n, seed, batch_index=0, transform=None, active_dims=None, **kw):
    """n tasks with per-task rng streams keyed by (seed, batch, task)."""
    tasks = []
    for i in range(n):
        rng = task_rng(seed, kind, batch_index, i)
        t = sample_task(kind, d, k, rng, active_dims=active_dims, **kw)
        if transform is not None:
            t = apply_ood_transform(t, transform, rng=rng)
        tasks.append(t)
    return tasks


# -- curriculum --------------------------------------------------------------------


@dataclass
class CurriculumSchedule:
    """Piecewise-constant (dims, k) growth: +dims_step / +k_step every
    `interval` steps, from (start_dims, start_k) up to (end_dims, end_k)."""

    start_dims: int
    start_k: int
    end_dims: int
    end_k: int
    interval: int = 2000
    dims_step: int = 1
    k_step: int = 2

    def validate(self):
        if self.start_dims > self.end_dims or self.start_k > self.end_k:
            raise ConfigError("curriculum must be nondecreasing")
        if self.interval < 1 or self.dims_step < 0 or self.k_step < 0:
            raise ConfigError("curriculum interval must be >= 1 and steps >= 0")
        return self

    @staticmethod
    def constant(d, k):
        return CurriculumSchedule(d, k, d, k, interval=1 << 30, dims_step=0, k_step=0)


def curriculum(step, schedule):
    """Active (dims, k) at a training step."""
    phase = step // schedule.interval
    dims = min(schedule.end_dims, schedule.start_dims + schedule.dims_step * phase)
    k = min(schedule.end_k, schedule.start_k + schedule.k_step * phase)
    return dims, k


# -- fixture persistence -----------------------------------------------------------


def save_task_batch(path, tasks):
    """Persist a same-kind task batch to the binary record container."""
    kinds = {t.kind for t in tasks}
    if len(kinds) != 1:
        raise ConfigError("fixture batches must be single-kind")
    arrays = {
        "xs": np.stack([t.xs for t in tasks]),
        "ys": np.stack([t.ys for t in tasks]),
    }
    for key in tasks[0].latent:
        stacked = np.stack([t.latent[key] for t in tasks])
        if stacked.dtype.kind in "iu":
            stacked = stacked.astype(np.int64)
        arrays[f"latent.{key}"] = stacked
    save_arrays(path, arrays, meta={"kind": tasks[0].kind, "d": tasks[0].d, "n": len(tasks)})


def load_task_batch(path):
    arrays, meta = load_arrays(path)
    n = meta["n"]
    latent_keys = [k.split(".", 1)[1] for k in arrays if k.startswith("latent.")]
    tasks = []
    for i in range(n):
        latent = {k: arrays[f"latent.{k}"][i] for k in latent_keys}
        tasks.append(TaskInstance(meta["kind"], meta["d"], arrays["xs"][i], arrays["ys"][i], latent))
    return tasks
