"""Transformer encoder for multivariate time series plus task heads.

Pipeline per batch (B samples, w steps, m variables)::

    x -> input projection (linear or 1-D conv) -> + positional encoding
      -> dropout -> n_blocks x [self-attention -> add & norm -> FFN -> add & norm]
      -> z (B, w, d_model) -> reconstruction head or flattened prediction head

Blocks are post-norm and use batch normalization over (batch, time) by
default; padded time steps are excluded from the statistics and receive a
-1e9 additive bias as attention keys.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .masking import make_rng
from .tensor import RunningStats, Tensor

PAD_BIAS = -1e9
HEAD_KINDS = ("reconstruction", "regression", "classification")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    m: int
    w: int
    d_model: int = 128
    n_heads: int = 16
    n_blocks: int = 3
    d_ff: int = 256
    dropout: float = 0.1
    activation: str = "gelu"
    norm: str = "batch"
    pos_encoding: str = "learnable"
    projection: str = "linear"
    conv_kernel: int = 1
    conv_stride: int = 1
    conv_dilation: int = 1
    conv_padding: str = "same"
    head: str = "reconstruction"
    n_out: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.m < 1 or self.w < 1:
            raise ConfigError(f"m and w must be >= 1, got m={self.m}, w={self.w}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.activation != "gelu":
            raise ConfigError(f"only gelu activation is supported, got {self.activation!r}")
        if self.norm not in ("batch", "layer"):
            raise ConfigError(f"norm must be 'batch' or 'layer', got {self.norm!r}")
        if self.pos_encoding not in ("learnable", "sinusoidal"):
            raise ConfigError(f"pos_encoding must be 'learnable' or 'sinusoidal', got {self.pos_encoding!r}")
        if self.projection not in ("linear", "conv"):
            raise ConfigError(f"projection must be 'linear' or 'conv', got {self.projection!r}")
        if self.conv_padding not in ("same", "valid"):
            raise ConfigError(f"conv_padding must be 'same' or 'valid', got {self.conv_padding!r}")
        if self.conv_padding == "same" and self.conv_stride != 1:
            raise ConfigError("'same' conv padding requires stride 1")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.head != "reconstruction" and self.n_out < 1:
            raise ConfigError(f"{self.head} head needs n_out >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.projection == "conv" and self.seq_len < 1:
            raise ConfigError(f"conv kernel spans more steps than w={self.w}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def span(self) -> int:
        """Number of input steps covered by one conv kernel application."""
        return self.conv_dilation * (self.conv_kernel - 1) + 1

    def out_length(self, n: int) -> int:
        """Sequence length after the input projection for an input of ``n`` steps."""
        if self.projection == "linear" or self.conv_padding == "same":
            return n
        return (n - self.span) // self.conv_stride + 1

    @property
    def seq_len(self) -> int:
        return self.out_length(self.w)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def encoder_signature(self) -> dict:
        """Fields that must agree for encoder weights to be transferable."""
        d = self.to_dict()
        for key in ("head", "n_out", "dropout"):
            d.pop(key)
        return d


def _xavier(rng, fan_out: int, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)


def sinusoidal_encoding(w: int, d: int) -> np.ndarray:
    pos = np.arange(w)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((w, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return pe


class TSTModel:
    """Parameter container; the forward computation lives in module functions."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.norm_stats: dict[str, RunningStats] = {}
        rng = make_rng(seed, 0x1417)
        c = config
        dt = c.np_dtype
        d = c.d_model

        if c.projection == "linear":
            self._param("project.weight", _xavier(rng, d, c.m, dt))
        else:
            fan_in, fan_out = c.conv_kernel * c.m, d
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self._param("project.weight", rng.uniform(-bound, bound, (d, c.conv_kernel, c.m)).astype(dt))
        self._param("project.bias", np.zeros(d, dt))
        if c.pos_encoding == "learnable":
            self._param("pos.weight", rng.uniform(-0.02, 0.02, (c.seq_len, d)).astype(dt))
        else:
            self.fixed_pos = sinusoidal_encoding(c.seq_len, d).astype(dt)

        for b in range(c.n_blocks):
            p = f"blocks.{b}"
            for name in ("q", "k", "v", "out"):
                self._param(f"{p}.attn.{name}.weight", _xavier(rng, d, d, dt))
                self._param(f"{p}.attn.{name}.bias", np.zeros(d, dt))
            self._param(f"{p}.ff1.weight", _xavier(rng, c.d_ff, d, dt))
            self._param(f"{p}.ff1.bias", np.zeros(c.d_ff, dt))
            self._param(f"{p}.ff2.weight", _xavier(rng, d, c.d_ff, dt))
            self._param(f"{p}.ff2.bias", np.zeros(d, dt))
            for n in ("norm1", "norm2"):
                self._param(f"{p}.{n}.weight", np.ones(d, dt))
                self._param(f"{p}.{n}.bias", np.zeros(d, dt))
                if c.norm == "batch":
                    self.norm_stats[f"{p}.{n}"] = RunningStats.create(d, dt)
        self.reset_head(rng)

    def _param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, dtype=value.dtype, name=name)

    def reset_head(self, rng=None) -> None:
        """(Re)initialize the task head for ``config.head`` / ``config.n_out``."""
        if rng is None:
            rng = make_rng(0, 0x4EAD)
        c = self.config
        dt = c.np_dtype
        for name in [n for n in self.params if n.startswith("head.")]:
            del self.params[name]
        if c.head == "reconstruction":
            self._param("head.weight", _xavier(rng, c.m, c.d_model, dt))
            self._param("head.bias", np.zeros(c.m, dt))
        else:
            self._param("head.weight", _xavier(rng, c.n_out, c.d_model * c.seq_len, dt))
            self._param("head.bias", np.zeros(c.n_out, dt))

    # -- parameter access -----------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def head_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("head.")]

    def encoder_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith("head.")]

    def n_parameters(self, prefix: str = "") -> int:
        return sum(p.size for n, p in self.params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters plus batch-norm running buffers, by canonical name."""
        out = {n: p.data.copy() for n, p in self.params.items()}
        for n, s in self.norm_stats.items():
            out[f"{n}.running_mean"] = s.mean.copy()
            out[f"{n}.running_var"] = s.var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], encoder_only: bool = False) -> None:
        names = self.encoder_names() if encoder_only else list(self.params)
        for n in names:
            if n not in state:
                raise KeyError(f"state is missing parameter {n!r}")
            if state[n].shape != self.params[n].shape:
                raise ConfigError(f"parameter {n!r}: shape {state[n].shape} != expected {self.params[n].shape}")
            self.params[n].data = np.array(state[n], dtype=self.config.np_dtype)
        for n, s in self.norm_stats.items():
            s.mean = np.array(state[f"{n}.running_mean"], dtype=self.config.np_dtype)
            s.var = np.array(state[f"{n}.running_var"], dtype=self.config.np_dtype)

    def copy(self) -> "TSTModel":
        clone = TSTModel.__new__(TSTModel)
        clone.config = self.config
        clone.params = {n: Tensor(p.data.copy(), requires_grad=p.requires_grad, name=n)
                        for n, p in self.params.items()}
        clone.norm_stats = {n: RunningStats(s.mean.copy(), s.var.copy(), s.momentum, s.eps)
                            for n, s in self.norm_stats.items()}
        if hasattr(self, "fixed_pos"):
            clone.fixed_pos = self.fixed_pos
        return clone

    def __call__(self, x, lengths, training: bool = False, rng=None) -> Tensor:
        z, out_lengths = encode(x, lengths, self, training=training, rng=rng)
        if self.config.head == "reconstruction":
            return head_reconstruct(z, self)
        return head_predict(z, out_lengths, self)


# -- closed-form parameter counts ------------------------------------------------
def expected_parameter_count(c: ModelConfig) -> dict[str, int]:
    d = c.d_model
    proj = d * c.m + d if c.projection == "linear" else d * c.conv_kernel * c.m + d
    pos = c.seq_len * d if c.pos_encoding == "learnable" else 0
    block = 4 * (d * d + d) + (c.d_ff * d + c.d_ff) + (d * c.d_ff + d) + 2 * 2 * d
    if c.head == "reconstruction":
        head = c.m * d + c.m
    else:
        head = c.n_out * d * c.seq_len + c.n_out
    return {"project": proj, "pos": pos, "blocks": c.n_blocks * block, "head": head,
            "total": proj + pos + c.n_blocks * block + head}


# -- forward pieces ----------------------------------------------------------------
def _as_input(x, model: TSTModel) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=model.config.np_dtype)


def embed_linear(x: Tensor, model: TSTModel) -> Tensor:
    """u_t = W_p x_t + b_p for every step of every sample, as one product."""
    if x.shape[-1] != model.config.m:
        raise ConfigError(f"input has {x.shape[-1]} variables, model expects m={model.config.m}")
    return T.linear(x, model["project.weight"], model["project.bias"])


def conv_windows(n: int, span: int, stride: int, dilation: int, padding: str) -> tuple[np.ndarray, int]:
    """Index matrix (out_len, kernel) into a left-padded input, and the left pad."""
    k = (span - 1) // dilation + 1
    if padding == "same":
        left = (span - 1) // 2
        n_out = n
    else:
        left = 0
        if span > n:
            raise ValueError(f"kernel spanning {span} steps is wider than the input ({n} steps)")
        n_out = (n - span) // stride + 1
    starts = np.arange(n_out) * stride
    return starts[:, None] + np.arange(k)[None, :] * dilation, left


def embed_conv(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1,
               dilation: int = 1, padding: str = "same") -> Tensor:
    """u(t, i) = sum_j sum_h x(t + j*dilation, h) K_i(j, h) (+ b_i)."""
    B, n, m = x.shape
    d, k, km = kernels.shape
    if km != m:
        raise ConfigError(f"kernels expect {km} variables, input has {m}")
    span = dilation * (k - 1) + 1
    idx, left = conv_windows(n, span, stride, dilation, padding)
    if padding == "same" and span > 1:
        right = span - 1 - left
        pad = Tensor(np.zeros((B, left, m), x.dtype)), Tensor(np.zeros((B, right, m), x.dtype))
        x = T.concat([pad[0], x, pad[1]], axis=1)
    windows = T.getitem(x, (slice(None), idx))  # (B, n_out, k, m)
    flat = T.reshape(windows, (B, idx.shape[0], k * m))
    return T.linear(flat, T.reshape(kernels, (d, k * m)), bias)


def add_positional(u: Tensor, model: TSTModel) -> Tensor:
    if u.shape[1] != model.config.seq_len:
        raise ConfigError(f"sequence has {u.shape[1]} steps, positional encoding has {model.config.seq_len}")
    if model.config.pos_encoding == "learnable":
        return u + model["pos.weight"]
    return u + Tensor(model.fixed_pos, dtype=u.dtype)


def build_padding_mask(lengths, w: int) -> np.ndarray:
    """Additive attention bias (B, w): 0 on real steps, -1e9 on padding."""
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError(f"every length must be >= 1, got {lengths.tolist()}")
    if np.any(lengths > w):
        raise ValueError(f"lengths {lengths.tolist()} exceed w={w}")
    return np.where(np.arange(w)[None, :] < lengths[:, None], 0.0, PAD_BIAS)


def attention_weights(h: Tensor, model: TSTModel, block: int, bias: np.ndarray) -> tuple[Tensor, Tensor]:
    """Softmax attention weights (B, heads, w, w) and the per-head values."""
    c = model.config
    B, w, d = h.shape
    heads, dk = c.n_heads, d // c.n_heads
    p = f"blocks.{block}.attn"

    def split(t):
        return T.transpose(T.reshape(t, (B, w, heads, dk)), (0, 2, 1, 3))

    q = split(T.linear(h, model[f"{p}.q.weight"], model[f"{p}.q.bias"]))
    k = split(T.linear(h, model[f"{p}.k.weight"], model[f"{p}.k.bias"]))
    v = split(T.linear(h, model[f"{p}.v.weight"], model[f"{p}.v.bias"]))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    scores = scores + Tensor(bias[:, None, None, :].astype(h.dtype))
    return T.softmax_last_dim(scores), v


def self_attention(h: Tensor, model: TSTModel, block: int, bias: np.ndarray, training: bool, rng) -> Tensor:
    B, w, d = h.shape
    attn, v = attention_weights(h, model, block, bias)
    attn = T.dropout(attn, model.config.dropout, training, rng)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, w, d))
    p = f"blocks.{block}.attn.out"
    return T.linear(ctx, model[f"{p}.weight"], model[f"{p}.bias"])


def _norm(h: Tensor, model: TSTModel, name: str, lengths, training: bool) -> Tensor:
    gamma, beta = model[f"{name}.weight"], model[f"{name}.bias"]
    if model.config.norm == "batch":
        return T.batchnorm_timewise(h, lengths, gamma, beta, model.norm_stats[name], training)
    return T.layernorm(h, gamma, beta)


def encoder_block(h: Tensor, model: TSTModel, block: int, lengths, bias, training: bool, rng) -> Tensor:
    c = model.config
    p = f"blocks.{block}"
    a = self_attention(h, model, block, bias, training, rng)
    h = _norm(h + T.dropout(a, c.dropout, training, rng), model, f"{p}.norm1", lengths, training)
    f = T.gelu(T.linear(h, model[f"{p}.ff1.weight"], model[f"{p}.ff1.bias"]))
    f = T.linear(f, model[f"{p}.ff2.weight"], model[f"{p}.ff2.bias"])
    return _norm(h + T.dropout(f, c.dropout, training, rng), model, f"{p}.norm2", lengths, training)


def encode(x, lengths, model: TSTModel, training: bool = False, rng=None) -> tuple[Tensor, np.ndarray]:
    """Final representations z (B, w', d) and the per-sample lengths after projection."""
    c = model.config
    x = _as_input(x, model)
    if x.ndim != 3 or x.shape[1] != c.w:
        raise ConfigError(f"expected input of shape (B, {c.w}, {c.m}), got {x.shape}")
    if x.shape[2] != c.m:
        raise ConfigError(f"input has {x.shape[2]} variables, model expects m={c.m}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if c.projection == "linear":
        u = embed_linear(x, model)
        out_lengths = lengths
    else:
        u = embed_conv(x, model["project.weight"], model["project.bias"], c.conv_stride,
                       c.conv_dilation, c.conv_padding)
        out_lengths = np.array([max(1, c.out_length(int(n))) for n in lengths])
    h = T.dropout(add_positional(u, model), c.dropout, training, rng)
    bias = build_padding_mask(out_lengths, c.seq_len)
    for b in range(c.n_blocks):
        h = encoder_block(h, model, b, out_lengths, bias, training, rng)
    return h, out_lengths


def head_reconstruct(z: Tensor, model: TSTModel) -> Tensor:
    """x_hat_t = W_o z_t + b_o at every step."""
    if model.config.head != "reconstruction":
        raise ConfigError(f"model has a {model.config.head} head, not a reconstruction head")
    return T.linear(z, model["head.weight"], model["head.bias"])


def head_predict(z: Tensor, lengths, model: TSTModel) -> Tensor:
    """Concatenate z_1..z_w (padding zeroed) and apply one linear layer -> (B, n_out).

    Classification heads return raw logits.
    """
    c = model.config
    if c.head not in ("regression", "classification"):
        raise ConfigError(f"model has a {c.head} head, not a regression/classification head")
    B, w, d = z.shape
    keep = (np.arange(w)[None, :] < np.asarray(lengths)[:, None]).astype(z.dtype)
    flat = T.reshape(z * Tensor(keep[:, :, None]), (B, w * d))
    return T.linear(flat, model["head.weight"], model["head.bias"])
