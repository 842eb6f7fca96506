"""A small seeded multimodal diffusion transformer used as a nonlinear velocity field.

Weights are random (no training); the architecture follows the MM-DiT
layout: multi-stream blocks project text and image tokens with separate
weights and attend jointly, single-stream blocks project the
concatenated sequence.  Every attention call passes its decoupled
quadrants through an optional hook.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..ddta import decompose_attention, recompose_attention
from .base import FieldError, VelocityField

VOCAB_SIZE = 256
PAD_ID = VOCAB_SIZE


@dataclass(frozen=True)
class ToyMMDiTConfig:
    d_model: int = 64
    n_heads: int = 4
    l_multi: int = 2
    l_single: int = 4
    n_text: int = 8
    grid_h: int = 8
    grid_w: int = 8
    channels: int = 4
    seed: int = 0

    def __post_init__(self):
        errors = []
        for name in ("d_model", "n_heads", "l_multi", "l_single", "n_text", "grid_h", "grid_w", "channels"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            errors.append(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 4:
            errors.append("d_model must be a multiple of 4 for the 2-D positional encoding")
        if not 0 <= self.seed < 2**64:
            errors.append("seed must be an unsigned 64-bit integer")
        if errors:
            raise FieldError("; ".join(errors))

    @property
    def latent_shape(self):
        return (self.channels, self.grid_h, self.grid_w)

    @property
    def n_image(self):
        return self.grid_h * self.grid_w

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PromptEmbedding:
    tokens: tuple
    vectors: np.ndarray


def softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm(x, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


def silu(x):
    return x / (1.0 + np.exp(-x))


def sinusoidal(x, dim, max_period=10000.0):
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = x * freqs
    return np.concatenate([np.cos(args), np.sin(args)])


def positional_encoding_2d(h, w, dim):
    quarter = dim // 4
    freqs = 1.0 / (100.0 ** (np.arange(quarter) / quarter))
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ys = ys.reshape(-1, 1) * freqs
    xs = xs.reshape(-1, 1) * freqs
    return np.concatenate([np.sin(ys), np.cos(ys), np.sin(xs), np.cos(xs)], axis=1)


def split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def joint_attention(q, k, v, n_c, hook=None, block_kind="multi", layer=0):
    """``softmax(Q K^T / sqrt(d)) V`` over the concatenated (text || image) sequence.

    ``q, k, v`` have shape ``(heads, n_c + n_i, d_head)``.  With a hook the
    map and values are decoupled, handed to ``hook.on_attention`` and
    reassembled before the product.
    """
    d_head = q.shape[-1]
    m = softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(d_head))
    if hook is not None:
        decoupled = hook.on_attention(block_kind, layer, decompose_attention(m, v, n_c))
        m, v = recompose_attention(decoupled)
    return m @ v


class _Rng:
    def __init__(self, seed, d_model):
        self.gen = np.random.default_rng(seed)
        self.scale = 1.0 / np.sqrt(d_model)

    def w(self, *shape):
        return self.gen.standard_normal(shape) * self.scale


class ToyMMDiT(VelocityField):
    """Deterministic toy MM-DiT ``v(z, t, prompt, guidance)`` over latents shaped ``(channels, grid_h, grid_w)``."""

    def __init__(self, cfg: ToyMMDiTConfig | None = None):
        self.cfg = cfg = cfg or ToyMMDiTConfig()
        d = cfg.d_model
        rng = _Rng(cfg.seed, d)
        self.embed_table = rng.gen.standard_normal((VOCAB_SIZE + 1, d))
        self.w_in = rng.w(cfg.channels, d)
        self.w_txt = rng.w(d, d)
        self.pos = positional_encoding_2d(cfg.grid_h, cfg.grid_w, d)
        self.w_t1 = rng.w(2 * d, d)
        self.w_t2 = rng.w(d, d)
        self.multi = []
        for _ in range(cfg.l_multi):
            blk = {}
            for s in ("c", "i"):
                blk[s] = {
                    "mod": rng.w(d, 2 * d),
                    "q": rng.w(d, d),
                    "k": rng.w(d, d),
                    "v": rng.w(d, d),
                    "o": rng.w(d, d),
                    "ff1": rng.w(d, 2 * d),
                    "ff2": rng.w(2 * d, d),
                }
            self.multi.append(blk)
        self.single = []
        for _ in range(cfg.l_single):
            self.single.append(
                {
                    "mod": rng.w(d, 2 * d),
                    "q": rng.w(d, d),
                    "k": rng.w(d, d),
                    "v": rng.w(d, d),
                    "o": rng.w(d, d),
                    "ff1": rng.w(d, 2 * d),
                    "ff2": rng.w(2 * d, d),
                }
            )
        self.w_out = rng.w(d, cfg.channels)
        self.default_prompt = self.embed_prompt([1])

    @property
    def n_blocks(self):
        return self.cfg.l_multi + self.cfg.l_single

    def embed_prompt(self, tokens) -> PromptEmbedding:
        tokens = [int(x) for x in tokens]
        if not 1 <= len(tokens) <= self.cfg.n_text:
            raise FieldError(f"prompt length {len(tokens)} not in [1, {self.cfg.n_text}]")
        bad = [x for x in tokens if not 0 <= x < VOCAB_SIZE]
        if bad:
            raise FieldError(f"token ids {bad} outside vocabulary [0, {VOCAB_SIZE})")
        padded = tokens + [PAD_ID] * (self.cfg.n_text - len(tokens))
        vectors = self.embed_table[padded]
        vectors.setflags(write=False)
        return PromptEmbedding(tuple(tokens), vectors)

    def _conditioning(self, t, guidance):
        d = self.cfg.d_model
        emb = np.concatenate([sinusoidal(4.0 * t, d), sinusoidal(guidance, d)])
        return silu(emb @ self.w_t1) @ self.w_t2

    @staticmethod
    def _modulate(x, mod, cond):
        shift, scale = np.split(cond @ mod, 2)
        return layer_norm(x) * (1.0 + scale) + shift

    def _eval(self, z, t, condition, guidance, hook):
        cfg = self.cfg
        if z.shape != cfg.latent_shape:
            raise FieldError(f"latent shape {z.shape} does not match model grid {cfg.latent_shape}")
        if condition is None:
            condition = self.default_prompt
        if condition.vectors.shape != (cfg.n_text, cfg.d_model):
            raise FieldError(f"prompt embedding shape {condition.vectors.shape} != ({cfg.n_text}, {cfg.d_model})")
        nh, n_c = cfg.n_heads, cfg.n_text
        cond = self._conditioning(t, guidance)

        h_c = condition.vectors @ self.w_txt
        h_i = z.reshape(cfg.channels, -1).T @ self.w_in + self.pos

        for layer, blk in enumerate(self.multi):
            x_c = self._modulate(h_c, blk["c"]["mod"], cond)
            x_i = self._modulate(h_i, blk["i"]["mod"], cond)
            q = np.concatenate([x_c @ blk["c"]["q"], x_i @ blk["i"]["q"]])
            k = np.concatenate([x_c @ blk["c"]["k"], x_i @ blk["i"]["k"]])
            v = np.concatenate([x_c @ blk["c"]["v"], x_i @ blk["i"]["v"]])
            att = merge_heads(joint_attention(split_heads(q, nh), split_heads(k, nh), split_heads(v, nh), n_c, hook, "multi", layer))
            h_c = h_c + att[:n_c] @ blk["c"]["o"]
            h_i = h_i + att[n_c:] @ blk["i"]["o"]
            h_c = h_c + gelu(layer_norm(h_c) @ blk["c"]["ff1"]) @ blk["c"]["ff2"]
            h_i = h_i + gelu(layer_norm(h_i) @ blk["i"]["ff1"]) @ blk["i"]["ff2"]

        h = np.concatenate([h_c, h_i])
        for layer, blk in enumerate(self.single):
            x = self._modulate(h, blk["mod"], cond)
            att = merge_heads(
                joint_attention(split_heads(x @ blk["q"], nh), split_heads(x @ blk["k"], nh), split_heads(x @ blk["v"], nh), n_c, hook, "single", layer)
            )
            h = h + att @ blk["o"]
            h = h + gelu(layer_norm(h) @ blk["ff1"]) @ blk["ff2"]

        out = layer_norm(h[n_c:]) @ self.w_out
        return out.T.reshape(cfg.latent_shape)

    def dump_config(self) -> str:
        return json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True)


def toy_mmdit_new(cfg: ToyMMDiTConfig | None = None) -> ToyMMDiT:
    return ToyMMDiT(cfg)


def embed_prompt(model: ToyMMDiT, tokens) -> PromptEmbedding:
    return model.embed_prompt(tokens)
