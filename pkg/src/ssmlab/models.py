"""Sequence model stacks: Mamba-style, LTI (S4-style) and a causal
transformer without positional encoding, behind one interface.

Prompts are interleaved token sequences (x_1, y_1, ..., x_k, y_k, x_{k+1})
of d-vectors; scalar targets ride in the first coordinate of their token.
Every family maps d -> D with a shared linear encoder, stacks pre-norm
residual blocks, applies a final layernorm and decodes each position to a
scalar with a shared linear read-out. Predictions are read at the x-token
positions, i.e. the model predicts y_i before seeing it.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor, param
from .checkpoint import load_arrays, save_arrays
from .errors import ConfigError, ContractError
from .ssm import (
    LtiSsmParams,
    SelectiveSsmParams,
    lti_convolutional,
    lti_recurrent,
    selective_recurrent,
    selective_scan,
)

FAMILIES = ("mamba", "lti_ssm", "transformer")


@dataclass
class ModelSpec:
    """Architecture descriptor from which any of the three families is built."""

    family: str
    input_dim: int
    embed_dim: int
    depth: int
    state_dim: int = 16
    heads: int = 8
    expansion: int = 2
    conv_width: int = 4
    mlp_ratio: int = 4
    delta_mode: str = "per_channel"  # or "scalar": one delta per token
    lti_discretization: str = "zoh"
    dtype: str = "f8"

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        for name in ("input_dim", "embed_dim", "depth", "state_dim", "heads", "expansion"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.family == "transformer" and self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.delta_mode not in ("per_channel", "scalar"):
            raise ConfigError(f"delta_mode must be per_channel or scalar, got {self.delta_mode!r}")
        if self.dtype not in ("f8", "f4"):
            raise ConfigError(f"dtype must be f8 or f4, got {self.dtype!r}")
        return self

    def np_dtype(self):
        return np.float64 if self.dtype == "f8" else np.float32

    def to_json_dict(self):
        return asdict(self)

    @staticmethod
    def from_json_dict(d):
        return ModelSpec(**d).validate()


# Reference configurations. Paper-scale specs mirror the published model
# sizes; desk specs keep the 2:1 SSM/transformer depth ratio at laptop scale.


def paper_transformer_spec(d=20):
    return ModelSpec("transformer", d, 256, 12, heads=8)


def paper_mamba_spec(d=20):
    return ModelSpec("mamba", d, 256, 24, state_dim=16)


def paper_lti_spec(d=20):
    return ModelSpec("lti_ssm", d, 435, 24, state_dim=16)


def desk_transformer_spec(d=5):
    return ModelSpec("transformer", d, 64, 4, heads=4)


def desk_mamba_spec(d=5):
    return ModelSpec("mamba", d, 64, 8, state_dim=16)


def desk_lti_spec(d=5):
    return ModelSpec("lti_ssm", d, 96, 8, state_dim=16)


def spec_for(name, d):
    table = {
        "paper_transformer": paper_transformer_spec,
        "paper_mamba": paper_mamba_spec,
        "paper_lti": paper_lti_spec,
        "desk_transformer": desk_transformer_spec,
        "desk_mamba": desk_mamba_spec,
        "desk_lti": desk_lti_spec,
    }
    if name not in table:
        raise ConfigError(f"unknown spec preset {name!r}")
    return table[name](d)


class Linear:
    def __init__(self, n_in, n_out, rng, std=None, zero=False, dtype=np.float64):
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            std = (1.0 / np.sqrt(n_in)) if std is None else std
            w = rng.standard_normal((n_in, n_out)) * std
        self.w = param(w, dtype=dtype)
        self.b = param(np.zeros(n_out), dtype=dtype)

    def __call__(self, x):
        # flatten leading dims so the product is one large GEMM rather
        # than a batch of small ones
        if x.ndim > 2:
            lead = x.shape[:-1]
            out = x.reshape(int(np.prod(lead)), x.shape[-1]) @ self.w + self.b
            return out.reshape(*lead, out.shape[-1])
        return x @ self.w + self.b

    def params(self):
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, dim, dtype=np.float64):
        self.g = param(np.ones(dim), dtype=dtype)
        self.b = param(np.zeros(dim), dtype=dtype)

    def __call__(self, x):
        return ad.layernorm(x, self.g, self.b)

    def apply_np(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return (xc / np.sqrt(var + ad.LAYERNORM_EPS)) * self.g.data + self.b.data

    def params(self):
        return {"g": self.g, "b": self.b}


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=size))


def _inv_softplus(y):
    return np.log(np.expm1(y))


class MambaBlock:
    """Pre-norm selective-SSM block: in-projection to expansion*D channels
    with a gate branch, width-``conv_width`` causal depthwise convolution,
    SiLU, selective SSM, SiLU-gated product, out-projection, residual."""

    def __init__(self, spec, rng, layer_idx):
        D = spec.embed_dim
        E = spec.expansion * D
        N = spec.state_dim
        W = spec.conv_width
        dt = spec.np_dtype()
        resid_scale = 1.0 / np.sqrt(2.0 * spec.depth)
        self.norm = LayerNorm(D, dtype=dt)
        self.in_proj = Linear(D, 2 * E, rng, dtype=dt)
        self.conv_w = param(rng.standard_normal((E, W)) / np.sqrt(W), dtype=dt)
        self.conv_b = param(np.zeros(E), dtype=dt)
        # state matrix kept as -exp(log) so the continuous diagonal stays
        # negative throughout training; initialized to -1..-N per channel
        self.a_log = param(np.log(np.tile(np.arange(1.0, N + 1.0), (E, 1))), dtype=dt)
        self.w_b = Linear(E, N, rng, dtype=dt)
        self.w_c = Linear(E, N, rng, dtype=dt)
        delta_out = E if spec.delta_mode == "per_channel" else 1
        self.w_dt = Linear(E, delta_out, rng, std=1.0 / np.sqrt(E), dtype=dt)
        self.w_dt.b = param(
            _inv_softplus(_log_uniform(rng, 1e-3, 1e-1, delta_out)), dtype=dt
        )
        self.out_proj = Linear(E, D, rng, std=resid_scale / np.sqrt(E), dtype=dt)
        self.scan_mode = "fused"

    def ssm_params(self):
        return SelectiveSsmParams(
            a=-ad.exp(self.a_log),
            w1=self.w_b.w,
            b1=self.w_b.b,
            w2=self.w_c.w,
            b2=self.w_c.b,
            w3=self.w_dt.w,
            b3=self.w_dt.b,
        )

    def __call__(self, x):
        u = self.norm(x)
        xz = self.in_proj(u)
        E = self.conv_w.shape[0]
        xc = xz[:, :, :E]
        gate = xz[:, :, E:]
        xc = ad.silu(dwconv(self.conv_w, self.conv_b, xc))
        p = self.ssm_params()
        if self.scan_mode == "parallel":
            y = selective_scan(p, xc)
        else:
            y = selective_recurrent(p, xc)
        y = y * ad.silu(gate)
        return x + self.out_proj(y)

    def params(self):
        out = {}
        for prefix, obj in (
            ("norm", self.norm),
            ("in_proj", self.in_proj),
            ("w_b", self.w_b),
            ("w_c", self.w_c),
            ("w_dt", self.w_dt),
            ("out_proj", self.out_proj),
        ):
            for k, v in obj.params().items():
                out[f"{prefix}.{k}"] = v
        out["conv_w"] = self.conv_w
        out["conv_b"] = self.conv_b
        out["a_log"] = self.a_log
        return out


def dwconv(w, bias, x):
    """Depthwise causal convolution as one tape op (fused kernels)."""
    wd = np.ascontiguousarray(w.data)
    xd = np.ascontiguousarray(x.data)
    y = kernels.dwconv_fwd(wd, np.ascontiguousarray(bias.data), xd)

    def vjp(g):
        return kernels.dwconv_bwd(wd, xd, np.ascontiguousarray(g))

    return Tensor.from_op(y, (w, bias, x), vjp)


_MASK_CACHE = {}


def causal_mask(T, dtype):
    key = (T, np.dtype(dtype).str)
    if key not in _MASK_CACHE:
        m = np.zeros((T, T), dtype=dtype)
        m[np.triu_indices(T, k=1)] = -np.inf
        _MASK_CACHE[key] = m
    return _MASK_CACHE[key]


class TransformerBlock:
    """Pre-norm causal multi-head self-attention + MLP. No positional
    encoding anywhere: order information exists only through the causal mask."""

    def __init__(self, spec, rng, layer_idx):
        D = spec.embed_dim
        dt = spec.np_dtype()
        resid_scale = 1.0 / np.sqrt(2.0 * spec.depth)
        self.heads = spec.heads
        self.norm1 = LayerNorm(D, dtype=dt)
        self.qkv = Linear(D, 3 * D, rng, dtype=dt)
        self.attn_out = Linear(D, D, rng, std=resid_scale / np.sqrt(D), dtype=dt)
        self.norm2 = LayerNorm(D, dtype=dt)
        self.mlp_in = Linear(D, spec.mlp_ratio * D, rng, dtype=dt)
        self.mlp_out = Linear(spec.mlp_ratio * D, D, rng, std=resid_scale / np.sqrt(spec.mlp_ratio * D), dtype=dt)

    def attention(self, u, return_weights=False):
        B, T, D = u.shape
        H = self.heads
        hd = D // H
        qkv = self.qkv(u)
        q = qkv[:, :, :D].reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        k = qkv[:, :, D : 2 * D].reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * D :].reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        scores = (q @ k.swapaxes(2, 3)) * (1.0 / np.sqrt(hd)) + Tensor(causal_mask(T, u.dtype))
        att = ad.softmax_lastdim(scores)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        out = self.attn_out(y)
        if return_weights:
            return out, att
        return out

    def __call__(self, x):
        x = x + self.attention(self.norm1(x))
        return x + self.mlp_out(ad.gelu(self.mlp_in(self.norm2(x))))

    def params(self):
        out = {}
        for prefix, obj in (
            ("norm1", self.norm1),
            ("qkv", self.qkv),
            ("attn_out", self.attn_out),
            ("norm2", self.norm2),
            ("mlp_in", self.mlp_in),
            ("mlp_out", self.mlp_out),
        ):
            for k, v in obj.params().items():
                out[f"{prefix}.{k}"] = v
        return out


class LtiBlock:
    """Pre-norm LTI-SSM block: per-channel diagonal SSM (convolutional mode
    for training, recurrent for inference), SiLU, channel-mixing projection,
    residual."""

    def __init__(self, spec, rng, layer_idx):
        D = spec.embed_dim
        N = spec.state_dim
        dt = spec.np_dtype()
        resid_scale = 1.0 / np.sqrt(2.0 * spec.depth)
        self.norm = LayerNorm(D, dtype=dt)
        self.a_log = param(np.log(np.tile(np.arange(1.0, N + 1.0), (D, 1))), dtype=dt)
        self.b = param(rng.standard_normal((D, N)), dtype=dt)
        self.c = param(rng.standard_normal((D, N)) / np.sqrt(N), dtype=dt)
        self.log_dt = param(np.log(_log_uniform(rng, 1e-3, 1e-1, D)), dtype=dt)
        self.mix = Linear(D, D, rng, std=resid_scale / np.sqrt(D), dtype=dt)
        self.discretization = spec.lti_discretization
        self.mode = "conv"

    def ssm_params(self):
        return LtiSsmParams(
            a=-ad.exp(self.a_log),
            b=self.b,
            c=self.c,
            delta=ad.exp(self.log_dt),
            discretization=self.discretization,
        )

    def __call__(self, x):
        u = self.norm(x)
        p = self.ssm_params()
        s = lti_recurrent(p, u) if self.mode == "recurrent" else lti_convolutional(p, u)
        return x + self.mix(ad.silu(s))

    def params(self):
        out = {f"norm.{k}": v for k, v in self.norm.params().items()}
        out.update({f"mix.{k}": v for k, v in self.mix.params().items()})
        out.update({"a_log": self.a_log, "b": self.b, "c": self.c, "log_dt": self.log_dt})
        return out


_BLOCK_TYPES = {"mamba": MambaBlock, "transformer": TransformerBlock, "lti_ssm": LtiBlock}


class SequenceModel:
    """A built stack: shared encoder, blocks, final norm, scalar decoder g.

    Exposes post-block hidden states on demand (``collect_hidden``) and the
    decoder application to arbitrary hidden states (``decode_hidden``) for
    the probing pipeline.
    """

    def __init__(self, spec, seed):
        spec.validate()
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD0D0)))
        dt = spec.np_dtype()
        self.encoder = Linear(spec.input_dim, spec.embed_dim, rng, dtype=dt)
        self.blocks = [_BLOCK_TYPES[spec.family](spec, rng, i) for i in range(spec.depth)]
        self.final_norm = LayerNorm(spec.embed_dim, dtype=dt)
        # zero-initialized read-out: an untrained model predicts exactly 0
        self.decoder = Linear(spec.embed_dim, 1, rng, zero=True, dtype=dt)

    # -- parameters -----------------------------------------------------

    def params(self):
        out = OrderedDict()
        for k, v in self.encoder.params().items():
            out[f"encoder.{k}"] = v
        for i, blk in enumerate(self.blocks):
            for k, v in blk.params().items():
                out[f"block{i}.{k}"] = v
        for k, v in self.final_norm.params().items():
            out[f"final_norm.{k}"] = v
        for k, v in self.decoder.params().items():
            out[f"decoder.{k}"] = v
        return out

    def num_params(self):
        return sum(int(p.size) for p in self.params().values())

    def param_hash(self):
        import hashlib

        h = hashlib.sha256()
        for name, p in sorted(self.params().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    # -- forward --------------------------------------------------------

    def set_mode(self, lti_mode=None, scan_mode=None):
        for blk in self.blocks:
            if lti_mode is not None and isinstance(blk, LtiBlock):
                blk.mode = lti_mode
            if scan_mode is not None and isinstance(blk, MambaBlock):
                blk.scan_mode = scan_mode

    def forward_tokens(self, tokens, collect_hidden=False):
        """tokens: (B, T, d) array or Tensor -> per-position scalar outputs
        (B, T) plus, optionally, the post-block hidden states."""
        if not isinstance(tokens, Tensor):
            tokens = Tensor(np.asarray(tokens, dtype=self.spec.np_dtype()))
        if tokens.ndim != 3 or tokens.shape[-1] != self.spec.input_dim:
            raise ContractError(
                f"tokens must be (B, T, {self.spec.input_dim}), got {tokens.shape}"
            )
        x = self.encoder(tokens)
        hidden = []
        for blk in self.blocks:
            x = blk(x)
            if collect_hidden:
                hidden.append(x.data)
        out = self.decoder(self.final_norm(x))
        B, T, _ = out.shape
        return out.reshape(B, T), hidden

    def forward_from_layer(self, hidden, layer_idx):
        """Re-run the stack suffix starting from the post-block state of
        ``layer_idx`` (0-based); returns per-position outputs."""
        x = Tensor(np.asarray(hidden, dtype=self.spec.np_dtype()))
        for blk in self.blocks[layer_idx + 1 :]:
            x = blk(x)
        out = self.decoder(self.final_norm(x))
        return out.reshape(out.shape[0], out.shape[1])

    def forward_prompt(self, prompts, collect_hidden=False):
        """prompts: (B, 2k+1, d) interleaved tokens. Returns predictions at
        every x position, (B, k+1), causally (y_i is predicted before seen)."""
        prompts = np.asarray(prompts)
        if prompts.ndim != 3 or prompts.shape[1] % 2 != 1:
            raise ContractError(
                f"prompts must be (B, 2k+1, d) interleaved tokens, got {prompts.shape}"
            )
        out, hidden = self.forward_tokens(prompts, collect_hidden=collect_hidden)
        preds = out[:, 0::2]
        if collect_hidden:
            return preds, hidden
        return preds

    # -- probing hooks ----------------------------------------------------

    def decode_hidden(self, z, tap="decoder_input"):
        """Apply the scalar read-out g to hidden states (numpy, no tape).

        tap='decoder_input' routes z through the final pre-decoder norm, so
        the last layer reproduces the model's own predictions exactly;
        tap='post_block' decodes the raw residual stream.
        """
        z = np.asarray(z)
        if tap == "decoder_input":
            z = self.final_norm.apply_np(z)
        elif tap != "post_block":
            raise ConfigError(f"unknown tap {tap!r}")
        return z @ self.decoder.w.data[:, 0] + self.decoder.b.data[0]

    # -- persistence ------------------------------------------------------

    def save(self, path, extra_meta=None):
        arrays = {k: v.data for k, v in self.params().items()}
        meta = {"model_spec": self.spec.to_json_dict(), "seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        save_arrays(path, arrays, meta=meta)

    @staticmethod
    def load(path):
        arrays, meta = load_arrays(path)
        spec = ModelSpec.from_json_dict(meta["model_spec"])
        model = SequenceModel(spec, seed=meta.get("seed", 0))
        own = model.params()
        if set(own) != set(arrays):
            missing = set(own) ^ set(arrays)
            raise ContractError(f"checkpoint parameter names do not match model: {sorted(missing)[:4]}")
        for k, p in own.items():
            if p.data.shape != arrays[k].shape:
                raise ContractError(f"shape mismatch for {k}: {p.data.shape} vs {arrays[k].shape}")
            p.data = arrays[k].astype(p.data.dtype, copy=True)
        return model


def build(spec, seed=0):
    """Deterministically construct a model for the given spec and seed."""
    return SequenceModel(spec, seed)
