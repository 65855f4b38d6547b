"""
Decoupled dual cross-attention with spatial-prior gating.

A single layer attends from shared queries to two contexts: prompt tokens
(text path, keys/values K, V) and reference-image tokens (adapter path, keys/
values K', V'). Per head::

    A  = softmax(Q K^T / sqrt(d)) V
    A' = softmax(Q K'^T / sqrt(d)) V'

Heads are merged by concatenation followed by the output projection. The
ungated output is ``merge(A) + merge(A')``. The gated output keeps the text
path everywhere and adds the adapter path only at positions where the
object mask is 1::

    x = merge(A) + mask * merge(A')

The mask comes from the head-averaged attention map of the object token,
thresholded to its top-valued fraction (:func:`percentile_mask`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import rng

__all__ = [
    "DEFAULT_LAMBDA",
    "DimensionError",
    "AttentionLayer",
    "CrossAttentionResult",
    "ObjectAttentionMap",
    "BindingSimilarityMatrix",
    "softmax",
    "cross_attention",
    "merge_heads",
    "kept_count",
    "percentile_mask",
    "object_attention_map",
    "spatial_prior_combine",
    "binding_similarity",
    "align_image_keys",
]

# Percentile below the kept region: 80 keeps the top 20% of an object map.
DEFAULT_LAMBDA = 80.0

NORMALIZATIONS = (None, "softmax", "max", "cosine")


class DimensionError(ValueError):
    """Inconsistent tensor shapes."""


def _matrix(x: ArrayLike, name: str) -> NDArray[np.float64]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class AttentionLayer:
    """Projection parameters for one dual cross-attention layer.

    ``w_q`` is shared by both paths. All key/value projections map into
    ``heads * head_dim`` columns; ``w_out`` maps the concatenated heads back
    to the output width (``None`` means identity).
    """

    heads: int
    head_dim: int
    w_q: NDArray[np.float64]
    w_k: NDArray[np.float64]
    w_v: NDArray[np.float64]
    w_k_img: NDArray[np.float64]
    w_v_img: NDArray[np.float64]
    w_out: NDArray[np.float64] | None = None
    b_v_img: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        if self.heads < 1 or self.head_dim < 1:
            raise DimensionError("heads and head_dim must be positive")
        inner = self.heads * self.head_dim
        for name in ("w_q", "w_k", "w_v", "w_k_img", "w_v_img"):
            m = _matrix(getattr(self, name), name)
            if m.shape[1] != inner:
                raise DimensionError(f"{name} has {m.shape[1]} columns, expected heads*head_dim={inner}")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if self.w_k.shape[0] != self.w_v.shape[0]:
            raise DimensionError("text key and value projections disagree on context width")
        if self.w_k_img.shape[0] != self.w_v_img.shape[0]:
            raise DimensionError("image key and value projections disagree on context width")
        if self.w_out is not None:
            w = _matrix(self.w_out, "w_out")
            if w.shape[0] != inner:
                raise DimensionError(f"w_out has {w.shape[0]} rows, expected {inner}")
            w.setflags(write=False)
            object.__setattr__(self, "w_out", w)
        if self.b_v_img is not None:
            b = np.asarray(self.b_v_img, dtype=np.float64).reshape(-1)
            if b.shape != (inner,):
                raise DimensionError(f"b_v_img must have {inner} entries")
            b.setflags(write=False)
            object.__setattr__(self, "b_v_img", b)

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def text_dim(self) -> int:
        return self.w_k.shape[0]

    @property
    def img_dim(self) -> int:
        return self.w_k_img.shape[0]

    @property
    def out_dim(self) -> int:
        return self.heads * self.head_dim if self.w_out is None else self.w_out.shape[1]

    @classmethod
    def random(
        cls,
        seed: int,
        model_dim: int,
        text_dim: int,
        img_dim: int,
        heads: int = 2,
        head_dim: int = 8,
        out_dim: int | None = None,
    ) -> AttentionLayer:
        """Seeded layer with N(0, 1/fan_in) weights and zero adapter bias."""
        inner = heads * head_dim

        def w(label: str, rows: int, cols: int) -> NDArray[np.float64]:
            return rng.standard_normal(rng.derive_seed(seed, label), (rows, cols)) / math.sqrt(rows)

        return cls(
            heads=heads,
            head_dim=head_dim,
            w_q=w("w_q", model_dim, inner),
            w_k=w("w_k", text_dim, inner),
            w_v=w("w_v", text_dim, inner),
            w_k_img=w("w_k_img", img_dim, inner),
            w_v_img=w("w_v_img", img_dim, inner),
            w_out=w("w_out", inner, out_dim if out_dim is not None else model_dim),
        )


class CrossAttentionResult(NamedTuple):
    output: NDArray[np.float64]
    """Merged ``merge(A) + merge(A')`` (or ``merge(A)`` without an image context)."""
    text_out: NDArray[np.float64]
    """Per-head text-path output A, shape (heads, queries, head_dim)."""
    img_out: NDArray[np.float64] | None
    """Per-head adapter-path output A', same shape as ``text_out``."""
    text_attn: NDArray[np.float64]
    """Text-path softmax probabilities, shape (heads, queries, text tokens)."""


def softmax(x: NDArray[np.float64], axis: int = -1) -> NDArray[np.float64]:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _split_heads(x: NDArray[np.float64], heads: int, head_dim: int) -> NDArray[np.float64]:
    return x.reshape(x.shape[0], heads, head_dim).transpose(1, 0, 2)


def _attend(q, k, v, head_dim):
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(head_dim)
    probs = softmax(scores, axis=-1)
    return probs @ v, probs


def merge_heads(per_head: NDArray[np.float64], w_out: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
    """Concatenate (heads, N, d) along features and apply the output projection."""
    per_head = np.asarray(per_head, dtype=np.float64)
    if per_head.ndim != 3:
        raise DimensionError(f"expected (heads, N, d), got shape {per_head.shape}")
    h, n, d = per_head.shape
    cat = per_head.transpose(1, 0, 2).reshape(n, h * d)
    if w_out is None:
        return cat
    if w_out.shape[0] != h * d:
        raise DimensionError(f"output projection expects {w_out.shape[0]} features, got {h * d}")
    return cat @ w_out


def cross_attention(
    layer: AttentionLayer,
    queries_in: ArrayLike,
    text_ctx: ArrayLike,
    img_ctx: ArrayLike | None = None,
) -> CrossAttentionResult:
    x = _matrix(queries_in, "queries_in")
    t = _matrix(text_ctx, "text_ctx")
    if x.shape[1] != layer.model_dim:
        raise DimensionError(f"queries have width {x.shape[1]}, layer expects {layer.model_dim}")
    if t.shape[1] != layer.text_dim:
        raise DimensionError(f"text context has width {t.shape[1]}, layer expects {layer.text_dim}")
    h, d = layer.heads, layer.head_dim

    q = _split_heads(x @ layer.w_q, h, d)
    a, text_attn = _attend(q, _split_heads(t @ layer.w_k, h, d), _split_heads(t @ layer.w_v, h, d), d)
    base = merge_heads(a, layer.w_out)
    if img_ctx is None:
        return CrossAttentionResult(base, a, None, text_attn)

    c = _matrix(img_ctx, "img_ctx")
    if c.shape[1] != layer.img_dim:
        raise DimensionError(f"image context has width {c.shape[1]}, layer expects {layer.img_dim}")
    v_img = c @ layer.w_v_img
    if layer.b_v_img is not None:
        v_img = v_img + layer.b_v_img
    a_img, _ = _attend(q, _split_heads(c @ layer.w_k_img, h, d), _split_heads(v_img, h, d), d)
    return CrossAttentionResult(base + merge_heads(a_img, layer.w_out), a, a_img, text_attn)


# ---------------------------------------------------------------------------
# Percentile mask
# ---------------------------------------------------------------------------


def kept_count(n: int, lam: float) -> int:
    """Number of positions kept by :func:`percentile_mask`: ceil((100 - lam)/100 * n), exactly."""
    if not 0.0 <= lam <= 100.0:
        raise ValueError(f"lambda must be in [0, 100], got {lam}")
    return math.ceil((100 - Fraction(lam)) * n / 100)


def percentile_mask(values: ArrayLike, lam: float = DEFAULT_LAMBDA) -> NDArray[np.uint8]:
    """Binary mask keeping the top ``100 - lam`` percent of entries by value.

    Ties at the cut go to the earlier row-major position.
    """
    m = np.asarray(values, dtype=np.float64)
    if m.size == 0:
        raise ValueError("cannot threshold an empty map")
    k = kept_count(m.size, lam)
    flat = m.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    out = np.zeros(flat.shape, dtype=np.uint8)
    out[order[:k]] = 1
    return out.reshape(m.shape)


@dataclass(frozen=True, eq=False)
class ObjectAttentionMap:
    per_head: NDArray[np.float64]  # (heads, H, W)
    mean: NDArray[np.float64]  # (H, W)
    lam: float
    mask: NDArray[np.uint8]  # (H, W)

    def with_lambda(self, lam: float) -> ObjectAttentionMap:
        return replace(self, lam=lam, mask=percentile_mask(self.mean, lam))


def _grid_for(n: int) -> tuple[int, int]:
    side = math.isqrt(n)
    if side * side != n:
        raise DimensionError(f"{n} query positions do not form a square grid; pass grid_shape")
    return side, side


def object_attention_map(
    text_attn_maps: ArrayLike,
    token_index: int,
    grid_shape: tuple[int, int] | None = None,
    lam: float = DEFAULT_LAMBDA,
) -> ObjectAttentionMap:
    """Head-averaged attention map of one prompt token over the spatial grid."""
    maps = np.asarray(text_attn_maps, dtype=np.float64)
    if maps.ndim != 3:
        raise DimensionError(f"expected (heads, queries, tokens), got shape {maps.shape}")
    heads, nq, nt = maps.shape
    if not 0 <= token_index < nt:
        raise IndexError(f"token index {token_index} outside [0, {nt})")
    hh, ww = grid_shape if grid_shape is not None else _grid_for(nq)
    if hh * ww != nq:
        raise DimensionError(f"grid {hh}x{ww} does not match {nq} query positions")
    per_head = maps[:, :, token_index].reshape(heads, hh, ww)
    mean = per_head.mean(axis=0)
    return ObjectAttentionMap(per_head, mean, lam, percentile_mask(mean, lam))


def spatial_prior_combine(
    text_out: ArrayLike,
    img_out: ArrayLike | None,
    mask: ArrayLike,
    w_out: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """Merge heads, then add the adapter contribution only where ``mask`` is 1.

    ``mask`` is the spatial (H, W) gate; its row-major flattening must line up
    with the query positions of ``text_out``.
    """
    a = np.asarray(text_out, dtype=np.float64)
    base = merge_heads(a, w_out)
    if img_out is None:
        return base
    a_img = np.asarray(img_out, dtype=np.float64)
    if a_img.shape != a.shape:
        raise DimensionError(f"adapter output shape {a_img.shape} != text output shape {a.shape}")
    gate = np.asarray(mask)
    if gate.size != a.shape[1]:
        raise DimensionError(f"mask has {gate.size} positions, attention has {a.shape[1]} queries")
    if not np.all((gate == 0) | (gate == 1)):
        raise ValueError("mask must be binary")
    gate = gate.reshape(-1, 1).astype(np.float64)
    return base + gate * merge_heads(a_img, w_out)


# ---------------------------------------------------------------------------
# Binding similarity
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BindingSimilarityMatrix:
    """Rows are text tokens, columns are adapter tokens."""

    raw: NDArray[np.float64]
    values: NDArray[np.float64]
    normalize: str | None


def binding_similarity(
    layer: AttentionLayer,
    text_tokens: ArrayLike,
    img_tokens: ArrayLike,
    normalize: str | None = None,
) -> BindingSimilarityMatrix:
    """Inner products between text-path keys and adapter-path keys.

    ``normalize``: ``None`` (raw), ``"softmax"`` (row softmax, rows sum to 1),
    ``"max"`` (row divided by its largest magnitude) or ``"cosine"``
    (unit-normalized keys).
    """
    if normalize not in NORMALIZATIONS:
        raise ValueError(f"normalize must be one of {NORMALIZATIONS}")
    t = _matrix(text_tokens, "text_tokens")
    v = _matrix(img_tokens, "img_tokens")
    if t.shape[1] != layer.text_dim:
        raise DimensionError(f"text tokens have width {t.shape[1]}, layer expects {layer.text_dim}")
    if v.shape[1] != layer.img_dim:
        raise DimensionError(f"image tokens have width {v.shape[1]}, layer expects {layer.img_dim}")
    k = t @ layer.w_k
    k_img = v @ layer.w_k_img
    raw = k @ k_img.T
    if normalize is None:
        values = raw.copy()
    elif normalize == "softmax":
        values = softmax(raw, axis=1)
    elif normalize == "max":
        scale = np.max(np.abs(raw), axis=1, keepdims=True)
        values = raw / np.where(scale > 0, scale, 1.0)
    else:
        nk = np.linalg.norm(k, axis=1, keepdims=True)
        ni = np.linalg.norm(k_img, axis=1, keepdims=True)
        values = raw / np.where(nk > 0, nk, 1.0) / np.where(ni > 0, ni, 1.0).T
    return BindingSimilarityMatrix(raw, values, normalize)


def align_image_keys(
    layer: AttentionLayer, text_tokens: ArrayLike, img_tokens: ArrayLike | None = None
) -> AttentionLayer:
    """Return a copy of ``layer`` whose adapter keys are aligned with ``text_tokens``.

    The new image-key projection sends image token j to the unit-normalized
    text key of token j. Without ``img_tokens`` the image tokens are taken to
    be one-hot (row j of the projection is that unit key, and ``img_dim``
    must equal the token count). Otherwise the projection is solved exactly
    with a pseudo-inverse, which needs linearly independent image tokens.
    """
    t = _matrix(text_tokens, "text_tokens")
    k = t @ layer.w_k
    norms = np.linalg.norm(k, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("a text token projects to the zero key")
    unit = k / norms
    if img_tokens is None:
        if t.shape[0] != layer.img_dim:
            raise DimensionError(f"need img_dim == number of text tokens ({layer.img_dim} != {t.shape[0]})")
        return replace(layer, w_k_img=unit)
    v = _matrix(img_tokens, "img_tokens")
    if v.shape != (t.shape[0], layer.img_dim):
        raise DimensionError(f"img_tokens must be ({t.shape[0]}, {layer.img_dim}), got {v.shape}")
    if np.linalg.matrix_rank(v) < v.shape[0]:
        raise ValueError("image tokens are linearly dependent; cannot align every token")
    return replace(layer, w_k_img=np.linalg.pinv(v) @ unit)
