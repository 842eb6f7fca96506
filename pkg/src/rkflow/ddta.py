"""Decoupled attention for joint text/image transformers.

The joint attention map of an MM-DiT layer is sliced into four quadrants
with text (condition) tokens first::

    M = [[M_cc, M_ci],
         [M_ic, M_ii]]

and the values into ``V = [V_c | V_i]``.  Editing swaps or averages
quadrants of the editing branch with snapshots saved during inversion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

REGIONS = ("m_cc", "m_ci", "m_ic", "m_ii", "v_c", "v_i")
OPS = ("none", "replace", "mean")
BLOCK_KINDS = ("multi", "single")


class DDTAError(ValueError):
    pass


class CacheMissError(KeyError):
    pass


@dataclass(frozen=True)
class DecoupledAttention:
    """Attention quadrants and split values of one layer.

    Arrays carry a leading head axis: maps are ``(heads, n_rows, n_cols)``
    and values ``(heads, n_tokens, d_head)``.
    """

    m_cc: np.ndarray
    m_ci: np.ndarray
    m_ic: np.ndarray
    m_ii: np.ndarray
    v_c: np.ndarray
    v_i: np.ndarray

    def __post_init__(self):
        n_c, n_i = self.n_c, self.n_i
        expected = {
            "m_cc": (n_c, n_c),
            "m_ci": (n_c, n_i),
            "m_ic": (n_i, n_c),
            "m_ii": (n_i, n_i),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape[-2:] != shape:
                raise DDTAError(f"{name} has shape {getattr(self, name).shape}, expected (..., {shape[0]}, {shape[1]})")
        if self.v_c.shape[-2] != n_c or self.v_i.shape[-2] != n_i:
            raise DDTAError("value split does not match token counts")

    @property
    def n_c(self) -> int:
        return self.m_cc.shape[-1]

    @property
    def n_i(self) -> int:
        return self.m_ii.shape[-1]

    def row_sums(self) -> np.ndarray:
        top = self.m_cc.sum(-1) + self.m_ci.sum(-1)
        bottom = self.m_ic.sum(-1) + self.m_ii.sum(-1)
        return np.concatenate([top, bottom], axis=-1)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in REGIONS}

    @classmethod
    def from_dict(cls, d) -> "DecoupledAttention":
        return cls(**{name: np.asarray(d[name], dtype=float) for name in REGIONS})


def decompose_attention(m, v, n_c: int) -> DecoupledAttention:
    m = np.asarray(m)
    v = np.asarray(v)
    n = m.shape[-1]
    if m.shape[-2] != n:
        raise DDTAError(f"attention map must be square, got {m.shape}")
    if v.shape[-2] != n:
        raise DDTAError(f"values have {v.shape[-2]} tokens, map has {n}")
    if not 0 < n_c < n:
        raise DDTAError(f"n_c={n_c} out of range for {n} tokens")
    return DecoupledAttention(
        m_cc=m[..., :n_c, :n_c].copy(),
        m_ci=m[..., :n_c, n_c:].copy(),
        m_ic=m[..., n_c:, :n_c].copy(),
        m_ii=m[..., n_c:, n_c:].copy(),
        v_c=v[..., :n_c, :].copy(),
        v_i=v[..., n_c:, :].copy(),
    )


def recompose_attention(d: DecoupledAttention):
    top = np.concatenate([d.m_cc, d.m_ci], axis=-1)
    bottom = np.concatenate([d.m_ic, d.m_ii], axis=-1)
    return np.concatenate([top, bottom], axis=-2), np.concatenate([d.v_c, d.v_i], axis=-2)


@dataclass(frozen=True)
class ManipulationPlan:
    """Per-region operation plus where and when to apply it.

    ``blocks`` restricts the block kinds, ``layers`` (if given) the layer
    indices, and ``d_list`` the function-evaluation counters.
    """

    ops: dict = field(default_factory=dict)
    blocks: tuple = ("single",)
    layers: tuple | None = None
    d_list: tuple = (1,)

    def __post_init__(self):
        ops = {name: "none" for name in REGIONS}
        for name, op in dict(self.ops).items():
            if name not in REGIONS:
                raise DDTAError(f"unknown region {name!r}; regions are {REGIONS}")
            if op not in OPS:
                raise DDTAError(f"unknown operation {op!r} for {name}; use one of {OPS}")
            ops[name] = op
        object.__setattr__(self, "ops", ops)
        for kind in self.blocks:
            if kind not in BLOCK_KINDS:
                raise DDTAError(f"unknown block kind {kind!r}")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "d_list", tuple(int(c) for c in self.d_list))
        if self.layers is not None:
            object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))

    @classmethod
    def default(cls) -> "ManipulationPlan":
        """Replace both cross-attention maps and average the image values in single-stream blocks at the first evaluation."""
        return cls(ops={"m_ci": "replace", "m_ic": "replace", "v_i": "mean"})

    @classmethod
    def uniform(cls, op, **kw) -> "ManipulationPlan":
        return cls(ops={name: op for name in REGIONS}, **kw)

    @property
    def is_empty(self) -> bool:
        return all(op == "none" for op in self.ops.values())

    def in_scope(self, block_kind, layer) -> bool:
        if block_kind not in self.blocks:
            return False
        return self.layers is None or layer in self.layers

    def validate_d_list(self, n_evals: int) -> None:
        bad = [c for c in self.d_list if not 1 <= c <= n_evals]
        if bad:
            raise DDTAError(f"d_list entries {bad} outside [1, {n_evals}]")

    def to_dict(self) -> dict:
        return {
            "ops": dict(self.ops),
            "blocks": list(self.blocks),
            "layers": None if self.layers is None else list(self.layers),
            "d_list": list(self.d_list),
        }


def manipulate(current: DecoupledAttention, cached: DecoupledAttention, plan: ManipulationPlan) -> DecoupledAttention:
    """Apply replace/mean per region. No renormalization is done afterwards."""
    out = {}
    for name in REGIONS:
        cur = getattr(current, name)
        op = plan.ops[name]
        if op == "none":
            out[name] = cur
            continue
        ref = getattr(cached, name)
        if ref.shape != cur.shape:
            raise DDTAError(f"cannot manipulate {name}: cached shape {ref.shape} != current {cur.shape}")
        out[name] = ref if op == "replace" else (ref + cur) / 2
    return replace(current, **out)


class AttentionCache:
    """Snapshots keyed by ``(fe_index, block_kind, layer)``; write-once."""

    def __init__(self):
        self._entries = {}

    def store(self, key, snapshot: DecoupledAttention) -> None:
        if key in self._entries:
            raise DDTAError(f"cache already holds an entry for {key}")
        for name in REGIONS:
            getattr(snapshot, name).setflags(write=False)
        self._entries[key] = snapshot

    def get(self, key) -> DecoupledAttention:
        try:
            return self._entries[key]
        except KeyError:
            raise CacheMissError(f"no cached attention for (fe_index, block, layer) = {key}") from None

    def __contains__(self, key):
        return key in self._entries

    def __len__(self):
        return len(self._entries)

    def keys(self):
        return sorted(self._entries, key=lambda k: (k[0], k[1], k[2]))

    def dump(self, path) -> None:
        """Spill to a plain JSON file of number arrays."""
        entries = [
            {"fe_index": k[0], "block": k[1], "layer": k[2], "attention": self._entries[k].to_dict()}
            for k in self.keys()
        ]
        Path(path).write_text(json.dumps({"entries": entries}))

    @classmethod
    def load(cls, path) -> "AttentionCache":
        cache = cls()
        for e in json.loads(Path(path).read_text())["entries"]:
            cache.store((e["fe_index"], e["block"], e["layer"]), DecoupledAttention.from_dict(e["attention"]))
        return cache


class SaveHook:
    def __init__(self, cache, fe_index, plan):
        self.cache, self.fe_index, self.plan = cache, fe_index, plan

    def on_attention(self, block_kind, layer, decoupled):
        if self.plan.in_scope(block_kind, layer):
            self.cache.store((self.fe_index, block_kind, layer), decoupled)
        return decoupled


class ManipulateHook:
    def __init__(self, cache, fe_index, plan):
        self.cache, self.fe_index, self.plan = cache, fe_index, plan

    def on_attention(self, block_kind, layer, decoupled):
        if not self.plan.in_scope(block_kind, layer):
            return decoupled
        cached = self.cache.get((self.fe_index, block_kind, layer))
        return manipulate(decoupled, cached, self.plan)


def cache_hook(cache: AttentionCache, fe_index: int, mode: str, plan: ManipulationPlan):
    if mode == "save":
        return SaveHook(cache, fe_index, plan)
    if mode == "manipulate":
        return ManipulateHook(cache, fe_index, plan)
    raise DDTAError(f"unknown hook mode {mode!r}")


class ResponseRecorder:
    """Hook that records head-averaged ``M_ic + M_ci^T`` for every block of every evaluation.

    Call :meth:`next_eval` before each field evaluation.
    """

    def __init__(self):
        self.records = []

    def next_eval(self):
        self.records.append([])
        return self

    def on_attention(self, block_kind, layer, decoupled):
        if not self.records:
            self.next_eval()
        cross = decoupled.m_ic + np.swapaxes(decoupled.m_ci, -1, -2)
        if cross.ndim == 3:
            cross = cross.mean(axis=0)
        self.records[-1].append(cross)
        return decoupled


@dataclass(frozen=True)
class ResponseMap:
    word_index: int
    grid_map: np.ndarray
    resized: np.ndarray


def bilinear_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear interpolation of a 2-D array."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def aggregate_response_maps(records, word_indices, n_steps, n_blocks, grid_hw, out_hw) -> list[ResponseMap]:
    """Word-pixel response maps from recorded cross-attention.

    ``A = (1/N) sum_steps (1/L) sum_blocks (M_ic + M_ci^T)``; the map for
    word ``g`` is column ``g`` of ``A`` on the image grid, bilinearly
    resized to ``out_hw``.
    """
    if len(records) != n_steps:
        raise DDTAError(f"expected {n_steps} recorded evaluations, got {len(records)}")
    acc = None
    for step in records:
        if len(step) != n_blocks:
            raise DDTAError(f"expected {n_blocks} blocks per evaluation, got {len(step)}")
        block_sum = step[0].copy()
        for cross in step[1:]:
            block_sum += cross
        block_sum /= n_blocks
        acc = block_sum if acc is None else acc + block_sum
    acc = acc / n_steps
    n_i, n_c = acc.shape
    gh, gw = grid_hw
    if gh * gw != n_i:
        raise DDTAError(f"grid {grid_hw} does not match {n_i} image tokens")
    maps = []
    for g in word_indices:
        if not 0 <= g < n_c:
            raise DDTAError(f"word index {g} out of range for {n_c} text tokens")
        grid = acc[:, g].reshape(gh, gw)
        maps.append(ResponseMap(int(g), grid, bilinear_resize(grid, *out_hw)))
    return maps
