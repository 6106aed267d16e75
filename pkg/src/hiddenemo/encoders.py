"""Trainable building blocks.

Spatial encoders map one frame of keypoint-node features ``[..., n, F]`` to a
frame embedding ``[..., E_f]``. The temporal encoder is a pre-norm transformer
over the frame sequence with sinusoidal positions and masked mean pooling. The
text encoder is the same stack on top of a token embedding.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hiddenemo.datamodel import ValidationError
from hiddenemo.topology import NormalizedAdjacency

SPATIAL_KINDS = ("mlp", "gcn", "gat", "gin")
ACTIVATIONS = ("relu", "gelu", "tanh", "linear")


def make_activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "gelu":
        return nn.GELU()
    if name == "tanh":
        return nn.Tanh()
    if name == "linear":
        return nn.Identity()
    raise ValidationError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class SpatialEncoderConfig:
    kind: str = "mlp"
    node_feature_dim: int = 8
    hidden_dim: int = 64
    layer_count: int = 1
    frame_embedding_dim: int = 64
    activation: str = "relu"
    attention_heads: int = 1
    epsilon_learnable: bool = True

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS:
            raise ValidationError(f"unknown spatial encoder kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        for name in ("node_feature_dim", "hidden_dim", "layer_count", "frame_embedding_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.kind == "gat":
            if self.attention_heads < 1:
                raise ValidationError("gat needs attention_heads >= 1")
            if self.hidden_dim % self.attention_heads:
                raise ValidationError("gat hidden_dim must be divisible by attention_heads")


@dataclass(frozen=True)
class TemporalEncoderConfig:
    model_dim: int = 128
    layer_count: int = 2
    head_count: int = 4
    feedforward_dim: int = 256
    max_sequence_length: int = 4096
    positional_encoding: str = "sinusoidal"
    dropout_rate: float = 0.1

    def __post_init__(self):
        if min(self.model_dim, self.layer_count, self.head_count, self.feedforward_dim, self.max_sequence_length) < 1:
            raise ValidationError("temporal encoder dims must be positive")
        if self.model_dim % self.head_count:
            raise ValidationError(f"model_dim {self.model_dim} not divisible by head_count {self.head_count}")
        if self.positional_encoding != "sinusoidal":
            raise ValidationError(f"unsupported positional encoding {self.positional_encoding!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TextEncoderConfig:
    vocabulary_size: int = 512
    token_embedding_dim: int = 64
    layer_count: int = 1
    head_count: int = 4
    feedforward_dim: int = 128
    max_tokens: int = 256
    pooling: str = "mean"
    dropout_rate: float = 0.1

    def __post_init__(self):
        if min(self.vocabulary_size, self.token_embedding_dim, self.layer_count, self.head_count, self.max_tokens) < 1:
            raise ValidationError("text encoder dims must be positive")
        if self.token_embedding_dim % self.head_count:
            raise ValidationError("token_embedding_dim must be divisible by head_count")
        if self.pooling != "mean":
            raise ValidationError(f"unsupported pooling {self.pooling!r}")

    def as_temporal(self) -> TemporalEncoderConfig:
        return TemporalEncoderConfig(
            model_dim=self.token_embedding_dim,
            layer_count=self.layer_count,
            head_count=self.head_count,
            feedforward_dim=self.feedforward_dim,
            max_sequence_length=self.max_tokens,
            dropout_rate=self.dropout_rate,
        )


# ---------------------------------------------------------------- spatial


class GCNLayer(nn.Module):
    def __init__(self, d_in, d_out, adjacency: torch.Tensor, activation):
        super().__init__()
        self.weight = nn.Linear(d_in, d_out, bias=False)
        self.bias = nn.Parameter(torch.zeros(d_out))
        self.register_buffer("adj", adjacency)
        self.act = make_activation(activation)

    def forward(self, x):
        h = torch.einsum("ij,...jf->...if", self.adj, self.weight(x))
        return self.act(h + self.bias)


class GATLayer(nn.Module):
    """Additive attention restricted to graph edges plus self-loops."""

    def __init__(self, d_in, d_out, heads, mask: torch.Tensor, activation):
        super().__init__()
        self.heads = heads
        self.head_dim = d_out // heads
        self.proj = nn.Linear(d_in, d_out, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        self.bias = nn.Parameter(torch.zeros(d_out))
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)
        self.register_buffer("mask", mask)
        self.act = make_activation(activation)

    def forward(self, x):
        z = self.proj(x).unflatten(-1, (self.heads, self.head_dim))  # [..., n, K, D]
        s_src = (z * self.att_src).sum(-1)  # [..., n, K]
        s_dst = (z * self.att_dst).sum(-1)
        e = F.leaky_relu(s_dst.unsqueeze(-2) + s_src.unsqueeze(-3), 0.2)  # [..., i, j, K]
        e = e.masked_fill(~self.mask[..., None], float("-inf"))
        alpha = torch.softmax(e, dim=-2)
        out = torch.einsum("...ijk,...jkd->...ikd", alpha, z).flatten(-2)
        return self.act(out + self.bias)


class GINLayer(nn.Module):
    def __init__(self, d_in, d_out, adjacency: torch.Tensor, activation, epsilon_learnable):
        super().__init__()
        self.register_buffer("adj", adjacency)
        if epsilon_learnable:
            self.eps = nn.Parameter(torch.zeros(()))
        else:
            self.register_buffer("eps", torch.zeros(()))
        self.mlp = nn.Sequential(nn.Linear(d_in, d_out), make_activation(activation), nn.Linear(d_out, d_out))
        self.act = make_activation(activation)

    def forward(self, x):
        agg = (1 + self.eps) * x + torch.einsum("ij,...jf->...if", self.adj, x)
        return self.act(self.mlp(agg))


class SpatialEncoder(nn.Module):
    """Per-frame encoder over ``n`` keypoint nodes with ``F`` features each."""

    def __init__(self, n_nodes: int, cfg: SpatialEncoderConfig, adjacency: NormalizedAdjacency | None = None):
        super().__init__()
        self.n_nodes = n_nodes
        self.cfg = cfg
        H, E = cfg.hidden_dim, cfg.frame_embedding_dim
        if cfg.kind == "mlp":
            dims = [n_nodes * cfg.node_feature_dim] + [H] * (cfg.layer_count - 1) + [E]
            layers = []
            for a, b in zip(dims, dims[1:]):
                layers += [nn.Linear(a, b), make_activation(cfg.activation)]
            self.body = nn.Sequential(*layers)
            self.readout = None
            return
        if adjacency is None:
            raise ValidationError(f"spatial encoder kind {cfg.kind!r} requires an adjacency")
        if adjacency.n != n_nodes:
            raise ValidationError(f"adjacency has {adjacency.n} nodes, encoder expects {n_nodes}")
        a_norm = torch.as_tensor(adjacency.matrix, dtype=torch.float32)
        a_raw = torch.as_tensor(adjacency.raw, dtype=torch.float32)
        dims = [cfg.node_feature_dim] + [H] * cfg.layer_count
        layers = []
        for a, b in zip(dims, dims[1:]):
            if cfg.kind == "gcn":
                layers.append(GCNLayer(a, b, a_norm.clone(), cfg.activation))
            elif cfg.kind == "gat":
                mask = (a_raw + torch.eye(n_nodes)) > 0
                layers.append(GATLayer(a, b, cfg.attention_heads, mask, cfg.activation))
            else:
                layers.append(GINLayer(a, b, a_raw.clone(), cfg.activation, cfg.epsilon_learnable))
        self.body = nn.Sequential(*layers)
        self.readout = nn.Linear(n_nodes * H, E)

    def forward(self, x):
        if x.shape[-2:] != (self.n_nodes, self.cfg.node_feature_dim):
            raise ValidationError(
                f"expected [..., {self.n_nodes}, {self.cfg.node_feature_dim}] input, got {tuple(x.shape)}"
            )
        if self.readout is None:
            return self.body(x.flatten(-2))
        return self.readout(self.body(x).flatten(-2))


def spatial_encode(frames, adjacency, cfg: SpatialEncoderConfig, encoder: SpatialEncoder | None = None):
    """Functional front door: ``[T, n, F]`` -> ``[T, E_f]``."""
    frames = torch.as_tensor(frames)
    if encoder is None:
        encoder = SpatialEncoder(frames.shape[-2], cfg, adjacency if cfg.kind != "mlp" else None).to(frames.dtype)
    return encoder(frames)


# ---------------------------------------------------------------- temporal


def sinusoidal_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return table.float()


class SelfAttention(nn.Module):
    def __init__(self, d, heads, dropout):
        super().__init__()
        self.heads = heads
        self.dropout = dropout
        self.q = nn.Linear(d, d)
        # a key bias only shifts every score of a query equally; softmax ignores it
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def forward(self, x, valid=None):
        def split(t):
            return t.unflatten(-1, (self.heads, -1)).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        mask = None if valid is None else valid[:, None, None, :]
        h = F.scaled_dot_product_attention(
            q, k, v, attn_mask=mask, dropout_p=self.dropout if self.training else 0.0
        )
        return self.out(h.transpose(1, 2).flatten(-2))


class EncoderLayer(nn.Module):
    """Pre-norm block: x + attn(norm(x)), then x + ff(norm(x))."""

    def __init__(self, d, heads, ff, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, heads, dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff, d))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, valid=None):
        x = x + self.drop(self.attn(self.norm1(x), valid))
        return x + self.drop(self.ff(self.norm2(x)))


class SequenceStack(nn.Module):
    def __init__(self, cfg: TemporalEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("pos", sinusoidal_table(cfg.max_sequence_length, cfg.model_dim), persistent=False)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.model_dim, cfg.head_count, cfg.feedforward_dim, cfg.dropout_rate)
            for _ in range(cfg.layer_count)
        )

    def forward(self, x, valid=None):
        T = x.shape[1]
        if T > self.cfg.max_sequence_length:
            raise ValidationError(f"sequence length {T} exceeds max_sequence_length {self.cfg.max_sequence_length}")
        x = x + self.pos[:T].to(x.dtype)
        for layer in self.layers:
            x = layer(x, valid)
        return x


def masked_mean(x, valid=None):
    if valid is None:
        return x.mean(dim=1)
    w = valid.to(x.dtype)[..., None]
    return (x * w).sum(dim=1) / w.sum(dim=1).clamp_min(1.0)


class TemporalEncoder(nn.Module):
    """``[B, T, d_in]`` -> pooled ``[B, d]``; ``valid`` marks non-padding positions."""

    def __init__(self, d_in: int, cfg: TemporalEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(d_in, cfg.model_dim)
        self.stack = SequenceStack(cfg)

    def encode(self, x, valid=None):
        return self.stack(self.input_proj(x), valid)

    def forward(self, x, valid=None):
        return masked_mean(self.encode(x, valid), valid)


def temporal_encode(sequence, cfg: TemporalEncoderConfig, encoder: TemporalEncoder | None = None):
    """``[T, d_in]`` -> ``[d]`` for a single unpadded sequence."""
    sequence = torch.as_tensor(sequence)
    if encoder is None:
        encoder = TemporalEncoder(sequence.shape[-1], cfg).to(sequence.dtype)
    return encoder(sequence[None])[0]


# ---------------------------------------------------------------- text


def tokenize(text: str, vocabulary_size: int) -> list[int]:
    """Hash lower-cased whitespace words into ids ``1..vocabulary_size-1`` (0 is padding)."""
    return [zlib.crc32(w.encode("utf-8")) % (vocabulary_size - 1) + 1 for w in text.lower().split()]


class TextEncoder(nn.Module):
    PAD = 0

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocabulary_size, cfg.token_embedding_dim)
        self.stack = SequenceStack(cfg.as_temporal())

    def forward(self, tokens, valid=None):
        if valid is None:
            valid = tokens != self.PAD
        x = self.stack(self.embed(tokens), valid)
        return masked_mean(x, valid)


def prepare_tokens(tokens, cfg: TextEncoderConfig) -> list[int]:
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise ValidationError("empty token list")
    bad = [t for t in tokens if not 0 <= t < cfg.vocabulary_size]
    if bad:
        raise ValidationError(f"token ids out of vocabulary (size {cfg.vocabulary_size}): {bad[:5]}")
    return tokens[: cfg.max_tokens]


def pad_tokens(batch, cfg: TextEncoderConfig):
    seqs = [prepare_tokens(t, cfg) for t in batch]
    width = max(len(s) for s in seqs)
    ids = torch.zeros(len(seqs), width, dtype=torch.long)
    valid = torch.zeros(len(seqs), width, dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s)
        valid[i, : len(s)] = True
    return ids, valid


def text_encode(tokens, cfg: TextEncoderConfig, encoder: TextEncoder | None = None):
    """Token id list -> ``[token_embedding_dim]``. Longer inputs are truncated to ``max_tokens``."""
    ids, valid = pad_tokens([tokens], cfg)
    if encoder is None:
        encoder = TextEncoder(cfg)
    return encoder(ids, valid)[0]


# ---------------------------------------------------------------- gradient check


def gradient_check(module: nn.Module, inputs, loss_fn=None, step: float = 1e-5, extra_params=()) -> dict:
    """Compare autograd gradients with central finite differences.

    The module is moved to float64 and put in eval mode (dropout off).
    ``inputs`` is a tuple passed to ``module(*inputs)``; float tensors among
    them are cast to float64. Returns ``{"max_rel_error": ..., "per_tensor": {...}}``
    where each tensor's error is ``|g_auto - g_fd|_2 / max(|g_auto|_2, |g_fd|_2, 1e-8)``;
    the floor keeps structurally zero gradients from reporting pure noise.
    ``extra_params`` adds non-module leaf tensors (e.g. logits) to the check.
    """
    module = module.double().eval()
    inputs = tuple(t.double() if torch.is_tensor(t) and t.is_floating_point() else t for t in inputs)
    if loss_fn is None:
        # fixed random projection of the output to a scalar
        with torch.no_grad():
            probe = module(*inputs)
        weights = torch.randn(probe.shape, generator=torch.Generator().manual_seed(0), dtype=torch.float64)

        def loss_fn(out):
            return (out * weights).sum()

    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    named += [(f"extra{i}", t) for i, t in enumerate(extra_params)]

    def evaluate():
        return loss_fn(module(*inputs))

    for _, p in named:
        p.grad = None
    evaluate().backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for n, p in named}

    per_tensor = {}
    with torch.no_grad():
        for name, p in named:
            flat = p.data.view(-1)
            numeric = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = evaluate().item()
                flat[i] = orig - step
                down = evaluate().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            a = analytic[name].view(-1)
            denom = max(a.norm().item(), numeric.norm().item(), 1e-8)
            per_tensor[name] = (a - numeric).norm().item() / denom
    return {"max_rel_error": max(per_tensor.values(), default=0.0), "per_tensor": per_tensor}


def count_parameters(module: nn.Module) -> int:
    return int(sum(np.prod(p.shape) for p in module.parameters()))
