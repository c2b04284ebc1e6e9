"""Fast invariant suite: mode equivalences, gradient checks, sampler
statistics. Each check reports a measured residual against its tolerance;
the CLI exits nonzero if any fails.

Setting SSMLAB_FAULT=<check-name> injects a sign flip into that check's
computation (a test hook proving the suite actually detects corruption).
"""

import os
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, param
from .checkpoint import load_arrays, save_arrays
from .models import ModelSpec, build
from .optim import Adam
from .ssm import (
    LtiSsmParams,
    SelectiveSsmParams,
    lti_convolutional,
    lti_recurrent,
    scan_combine,
    selective_recurrent,
    selective_scan,
)
from .tasks import sample_task, task_rng


def _fault(name, value):
    if os.environ.get("SSMLAB_FAULT", "") == name:
        return -value
    return value


def _rand_lti(C, N, rng):
    return LtiSsmParams(
        a=param(-(rng.random((C, N)) * 3.0 + 0.1)),
        b=param(rng.standard_normal((C, N))),
        c=param(rng.standard_normal((C, N)) / np.sqrt(N)),
        delta=param(rng.random(C) * 0.5 + 0.01),
    )


def _rand_selective(C, N, rng):
    return SelectiveSsmParams(
        a=param(-(rng.random((C, N)) * 3.0 + 0.1)),
        w1=param(rng.standard_normal((C, N)) / np.sqrt(C)),
        b1=param(rng.standard_normal(N) * 0.2),
        w2=param(rng.standard_normal((C, N)) / np.sqrt(C)),
        b2=param(rng.standard_normal(N) * 0.2),
        w3=param(rng.standard_normal((C, C)) / np.sqrt(C)),
        b3=param(rng.standard_normal(C) * 0.2),
    )


def check_lti_mode_equivalence():
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(5):
        p = _rand_lti(3, 5, rng)
        x = Tensor(rng.standard_normal((2, 64, 3)))
        yr = lti_recurrent(p, x).data
        yc = lti_convolutional(p, x).data
        worst = max(worst, float(np.max(np.abs(_fault("lti_mode_equivalence", yr) - yc))))
    return worst, 1e-6


def check_selective_scan_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(5):
        p = _rand_selective(3, 4, rng)
        x = Tensor(rng.standard_normal((1, 48, 3)))
        yr = selective_recurrent(p, x).data
        ys = selective_scan(p, x).data
        worst = max(worst, float(np.max(np.abs(_fault("selective_scan_equivalence", yr) - ys))))
    return worst, 1e-8


def check_selective_scan_grad_equivalence():
    rng = np.random.default_rng(3)
    p = _rand_selective(2, 3, rng)
    x = param(rng.standard_normal((1, 24, 2)))
    w = Tensor(rng.standard_normal((1, 24, 2)))
    tensors = [p.a, p.w1, p.b1, p.w2, p.b2, p.w3, p.b3, x]
    grads = {}
    for route, fn in (("rec", selective_recurrent), ("scan", selective_scan)):
        for t in tensors:
            t.grad = None
        backward((fn(p, x) * w).sum())
        grads[route] = [t.grad.copy() for t in tensors]
    worst = 0.0
    for gr, gs in zip(grads["rec"], grads["scan"]):
        scale = max(1e-12, np.max(np.abs(gr)), np.max(np.abs(gs)))
        worst = max(worst, float(np.max(np.abs(_fault("selective_scan_grad_equivalence", gr) - gs)) / scale))
    return worst, 1e-5


def check_block_gradients():
    spec = ModelSpec("mamba", input_dim=3, embed_dim=4, depth=1, state_dim=2, expansion=2)
    m = build(spec, seed=4)
    blk = m.blocks[0]
    rng = np.random.default_rng(5)
    x = param(rng.standard_normal((1, 6, 4)) * 0.7)
    w = Tensor(rng.standard_normal((1, 6, 4)))
    tensors = list(blk.params().values()) + [x]

    def loss():
        return (blk(x) * w).sum()

    for t in tensors:
        t.grad = None
    backward(loss())
    worst = 0.0
    eps = 1e-6
    for t in tensors:
        flat = t.data.reshape(-1)
        grad = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        idx = range(0, flat.size, max(1, flat.size // 8))  # spot-check elements
        fd = np.zeros(len(list(idx)))
        got = []
        for j, i in enumerate(range(0, flat.size, max(1, flat.size // 8))):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss().data)
            flat[i] = orig - eps
            fm = float(loss().data)
            flat[i] = orig
            fd[j] = (fp - fm) / (2 * eps)
            got.append(grad[i])
        got = np.array(got)
        scale = max(1e-12, np.max(np.abs(fd)), np.max(np.abs(got)))
        worst = max(worst, float(np.max(np.abs(_fault("block_gradients", got) - fd)) / scale))
    return worst, 1e-4


def check_scan_monoid_associativity():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        p, q, r = ((rng.standard_normal(4), rng.standard_normal(4)) for _ in range(3))
        left = scan_combine(scan_combine(p, q), r)
        right = scan_combine(p, scan_combine(q, r))
        worst = max(
            worst,
            float(np.max(np.abs(_fault("scan_monoid_associativity", left[0]) - right[0]))),
            float(np.max(np.abs(left[1] - right[1]))),
        )
    return worst, 1e-12


def check_sampler_skewed_spectrum():
    d = 5
    t = sample_task("skewed_linear", d, 20000, task_rng(7))
    cov = t.xs.T @ t.xs / len(t.xs)
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    expect = 1.0 / np.arange(1, d + 1) ** 4
    return float(np.max(np.abs(_fault("sampler_skewed_spectrum", eig) - expect) / expect)), 0.2


def check_sampler_linear_variance():
    d = 5
    ys = np.array([sample_task("linear", d, 1, task_rng(8, i)).ys[0] for i in range(4000)])
    return float(abs(_fault("sampler_linear_variance", ys.var()) - d) / d), 0.1


def check_zero_predictor_calibration():
    errs = [sample_task("linear", 5, 1, task_rng(9, i)).ys[-1] ** 2 for i in range(4000)]
    return float(abs(_fault("zero_predictor_calibration", np.mean(errs)) / 5.0 - 1.0)), 0.1


def check_adam_reference():
    p = param([2.0])
    opt = Adam({"p": p}, lr=0.05)
    for g in (0.7, -1.3):
        p.grad = np.array([g])
        opt.step()
    x, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate((0.7, -1.3), start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    return float(abs(_fault("adam_reference", p.data[0]) - x)), 1e-14


def check_checkpoint_roundtrip():
    import tempfile

    rng = np.random.default_rng(10)
    arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(7)}
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.bin")
        save_arrays(path, arrays)
        back, _ = load_arrays(path)
    worst = max(float(np.max(np.abs(_fault("checkpoint_roundtrip", back[k]) - arrays[k]))) for k in arrays)
    return worst, 0.0


CHECKS = [
    ("lti_mode_equivalence", check_lti_mode_equivalence),
    ("selective_scan_equivalence", check_selective_scan_equivalence),
    ("selective_scan_grad_equivalence", check_selective_scan_grad_equivalence),
    ("block_gradients", check_block_gradients),
    ("scan_monoid_associativity", check_scan_monoid_associativity),
    ("sampler_skewed_spectrum", check_sampler_skewed_spectrum),
    ("sampler_linear_variance", check_sampler_linear_variance),
    ("zero_predictor_calibration", check_zero_predictor_calibration),
    ("adam_reference", check_adam_reference),
    ("checkpoint_roundtrip", check_checkpoint_roundtrip),
]


def run_selftest(out=print):
    """Run every invariant; returns True iff all pass."""
    ok = True
    out(f"{'invariant':36s} {'residual':>12s} {'tolerance':>12s}  status")
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            residual, tol = fn()
            passed = residual <= tol
        except Exception as e:  # a crash is a failure with the exception as residual
            residual, tol, passed = float("nan"), 0.0, False
            out(f"{name:36s} raised {type(e).__name__}: {e}")
        ok &= passed
        out(
            f"{name:36s} {residual:12.3e} {tol:12.3e}  "
            f"{'PASS' if passed else 'FAIL'} ({time.perf_counter() - t0:.1f}s)"
        )
    return ok
