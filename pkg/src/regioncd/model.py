"""Miniature vision-language decoder.

The encoder mean-pools pixel blocks into patch tokens laid out exactly like
the token mask from :mod:`regioncd.masks`: the local crop tiling row by row
with a separator embedding after each composite row, one mid separator, then
the global view with per-row separators. On top sits a pre-norm transformer
(RMSNorm, multi-head attention, GELU feed-forward) in which the visual
prefix is fully mutually visible and text positions attend causally.

Weights are stored as float32; all forward-pass arithmetic runs in float64,
which keeps results reproducible to well below 1e-6 across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from regioncd import pgm
from regioncd.config import ModelConfig
from regioncd.errors import InputError, NumericError, ShapeError
from regioncd.masks import SEG_LOCAL, SEG_GLOBAL, segment_labels
from regioncd.weights import WeightSet

NORM_EPS = 1e-6
_SQRT_2_OVER_PI = 0.7978845608028654


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image with intensities in [0, 1]."""

    width: int
    height: int
    intensities: np.ndarray  # (height, width) float64

    def __post_init__(self) -> None:
        if self.intensities.shape != (self.height, self.width):
            raise ShapeError(
                f"intensity array shape {self.intensities.shape} != ({self.height}, {self.width})"
            )
        if not np.isfinite(self.intensities).all():
            raise NumericError("image intensities must be finite")
        if self.intensities.min(initial=0.0) < 0.0 or self.intensities.max(initial=0.0) > 1.0:
            raise InputError("image intensities must lie in [0, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GrayImage":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"image array must be 2-D, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], intensities=a)

    @classmethod
    def from_pgm(cls, path: str | Path) -> "GrayImage":
        samples, maxval = pgm.read_pgm(path)
        return cls.from_array(samples.astype(np.float64) / float(maxval))


@dataclass(frozen=True, eq=False)
class VisualSequence:
    """Visual token embeddings plus the segment label of each position."""

    embeddings: np.ndarray  # (N, embed_dim) float64
    layout: list[str]

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2 or len(self.layout) != self.embeddings.shape[0]:
            raise ShapeError("embeddings and layout lengths disagree")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def _pool_means(intensities: np.ndarray, rows: int, cols: int) -> np.ndarray:
    h, w = intensities.shape
    return intensities.reshape(rows, h // rows, cols, w // cols).mean(axis=(1, 3))


def encode_image(img: GrayImage, cfg: ModelConfig, w: WeightSet) -> VisualSequence:
    """Patchify both views and emit embeddings in token-mask order.

    A patch embedding is the mean intensity of its pixel block pushed
    through the affine patch projection, plus the positional term; separator
    positions hold the learned separator embedding plus their positional
    term. Tiling the image into equal crops and patchifying each crop is
    equivalent to patchifying the whole image at composite resolution, so
    one pooling pass serves the local view.
    """
    if (img.width, img.height) != (cfg.image_side, cfg.image_side):
        raise ShapeError(
            f"image is {img.width}x{img.height}, config wants "
            f"{cfg.image_side}x{cfg.image_side}"
        )
    spec = cfg.grid()
    local = _pool_means(img.intensities, spec.local_rows, spec.local_cols)
    global_ = _pool_means(img.intensities, spec.side, spec.side)

    proj = w.tensors["patch_proj.weight"].astype(np.float64)[:, 0]
    bias = w.tensors["patch_proj.bias"].astype(np.float64)
    pos = w.tensors["pos_embed"].astype(np.float64)
    sep = w.tensors["sep_embed"].astype(np.float64)[cfg.sep_embed_id]

    layout = segment_labels(spec)
    emb = np.empty((len(layout), cfg.embed_dim), dtype=np.float64)
    local_it = iter(local.ravel())
    global_it = iter(global_.ravel())
    for i, label in enumerate(layout):
        if label == SEG_LOCAL:
            emb[i] = next(local_it) * proj + bias + pos[i]
        elif label == SEG_GLOBAL:
            emb[i] = next(global_it) * proj + bias + pos[i]
        else:
            emb[i] = sep + pos[i]
    return VisualSequence(embeddings=emb, layout=layout)


def _rms_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return x / np.sqrt(ms + NORM_EPS) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation
    return 0.5 * x * (1.0 + np.tanh(_SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)))


def _attn_probs(scores: np.ndarray, visible: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Reweighted softmax over the visible keys of each row.

    ``factors`` multiplies the shifted exponentials per key position before
    normalization; with all factors 1 this is a plain masked softmax.
    """
    s = np.where(visible[:, None, :], scores, -np.inf)
    shifted = np.exp(s - s.max(axis=-1, keepdims=True)) * factors
    return shifted / shifted.sum(axis=-1, keepdims=True)


class DecoderSession:
    """One growing decode branch over a fixed visual prefix.

    Keys and values are cached per layer, so each appended token costs a
    single attention row. An optional ``attn_policy`` (mask over visual
    positions, beta) turns every attention softmax in this branch into the
    beta-reweighted form; text positions always carry mask value 0.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        weights: WeightSet,
        visual: VisualSequence,
        attn_policy: tuple[np.ndarray, float] | None = None,
        record_attention: bool = False,
    ):
        if weights.config != cfg:
            raise InputError("weight set was built for a different config")
        if len(visual) != cfg.n_visual:
            raise ShapeError(
                f"visual sequence length {len(visual)} != {cfg.n_visual} for this config"
            )
        self.cfg = cfg
        self._t = {name: t.astype(np.float64) for name, t in weights.tensors.items()}
        self._n_visual = len(visual)
        factors = np.ones(cfg.max_seq, dtype=np.float64)
        if attn_policy is not None:
            mask, beta = attn_policy
            mask = np.asarray(mask)
            if mask.shape != (self._n_visual,):
                raise ShapeError(
                    f"policy mask length {mask.shape} != visual length {self._n_visual}"
                )
            if beta < 1.0:
                raise InputError(f"beta must be >= 1, got {beta}")
            factors[: self._n_visual] = np.where(mask != 0, float(beta), 1.0)
        self._factors = factors
        self._kv: list[tuple[np.ndarray, np.ndarray] | None] = [None] * cfg.n_layers
        self._len = 0
        self.text_ids: list[int] = []
        self.attention_rows: list[tuple[int, int, np.ndarray]] | None = (
            [] if record_attention else None
        )
        self._process_block(visual.embeddings, bidirectional=True)

    @property
    def length(self) -> int:
        return self._len

    def extend_with_tokens(self, ids: Sequence[int]) -> np.ndarray:
        """Append token ids causally; returns next-token logits."""
        ids = [int(i) for i in ids]
        if not ids:
            raise InputError("token block must be non-empty")
        if any(i < 0 or i >= self.cfg.vocab_size for i in ids):
            raise InputError(f"token id outside vocab of size {self.cfg.vocab_size}")
        start = self._len
        if start + len(ids) > self.cfg.max_seq:
            raise InputError(
                f"sequence length {start + len(ids)} overflows max_seq {self.cfg.max_seq}"
            )
        emb = self._t["token_embed"][ids] + self._t["pos_embed"][start : start + len(ids)]
        logits = self._process_block(emb, bidirectional=False)
        self.text_ids.extend(ids)
        return logits

    def _process_block(self, emb: np.ndarray, bidirectional: bool) -> np.ndarray:
        cfg = self.cfg
        b = emb.shape[0]
        start = self._len
        if start + b > cfg.max_seq:
            raise InputError(
                f"sequence length {start + b} overflows max_seq {cfg.max_seq}"
            )
        total = start + b
        if bidirectional:
            assert start == 0, "the bidirectional prefix must come first"
            visible = np.ones((b, total), dtype=bool)
        else:
            visible = np.arange(total)[None, :] <= (start + np.arange(b))[:, None]
        factors = self._factors[:total]
        h = np.array(emb, dtype=np.float64)
        scale = 1.0 / math.sqrt(cfg.head_dim)
        for li in range(cfg.n_layers):
            p = f"layers.{li}."
            xn = _rms_norm(h, self._t[p + "attn_norm.gain"], self._t[p + "attn_norm.bias"])
            q = (xn @ self._t[p + "attn.wq"]).reshape(b, cfg.n_heads, cfg.head_dim)
            k_new = (xn @ self._t[p + "attn.wk"]).reshape(b, cfg.n_heads, cfg.head_dim)
            v_new = (xn @ self._t[p + "attn.wv"]).reshape(b, cfg.n_heads, cfg.head_dim)
            cached = self._kv[li]
            if cached is None:
                k, v = k_new, v_new
            else:
                k = np.concatenate([cached[0], k_new], axis=0)
                v = np.concatenate([cached[1], v_new], axis=0)
            self._kv[li] = (k, v)
            scores = np.einsum("bhd,thd->bht", q, k) * scale
            probs = _attn_probs(scores, visible, factors)
            if self.attention_rows is not None:
                self.attention_rows.append((li, start, probs))
            ctx = np.einsum("bht,thd->bhd", probs, v).reshape(b, cfg.embed_dim)
            h = h + ctx @ self._t[p + "attn.wo"]
            xn = _rms_norm(h, self._t[p + "ffn_norm.gain"], self._t[p + "ffn_norm.bias"])
            h = h + _gelu(xn @ self._t[p + "ffn.w1"] + self._t[p + "ffn.b1"]) @ self._t[
                p + "ffn.w2"
            ] + self._t[p + "ffn.b2"]
        self._len = total
        z = _rms_norm(h[-1], self._t["final_norm.gain"], self._t["final_norm.bias"])
        logits = z @ self._t["head.weight"]
        if not np.isfinite(logits).all():
            raise NumericError("non-finite logits in forward pass")
        return logits


def forward_logits(
    visual: VisualSequence,
    text: Sequence[int],
    cfg: ModelConfig,
    w: WeightSet,
    attn_policy: tuple[np.ndarray, float] | None = None,
) -> np.ndarray:
    """One-shot forward over [visual; text]; logits at the final position."""
    session = DecoderSession(cfg, w, visual, attn_policy=attn_policy)
    return session.extend_with_tokens(text)
