"""Dataclass configs for the miniature decoder and the guidance parameters."""

from __future__ import annotations

from dataclasses import dataclass, fields

from regioncd.errors import InputError
from regioncd.masks import GridSpec, expected_length


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the miniature vision-language decoder.

    ``feature_side`` is the patch-grid side of one view and ``crop_rows`` x
    ``crop_cols`` the tiling of the image into local crops; together they fix
    the visual token layout. ``sep_embed_id`` selects the row of the learned
    separator-embedding table used at newline positions.
    """

    vocab_size: int
    embed_dim: int
    n_heads: int
    n_layers: int
    feature_side: int
    crop_rows: int = 1
    crop_cols: int = 1
    image_side: int = 336
    max_seq: int = 512
    eos_id: int = 0
    sep_embed_id: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 4:
            raise InputError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.embed_dim < 1 or self.n_heads < 1 or self.embed_dim % self.n_heads:
            raise InputError(
                f"embed_dim {self.embed_dim} must be a positive multiple of n_heads {self.n_heads}"
            )
        if self.n_layers < 1:
            raise InputError("n_layers must be >= 1")
        spec = self.grid()
        for side in (self.feature_side, spec.local_rows, spec.local_cols):
            if self.image_side % side:
                raise InputError(
                    f"image_side {self.image_side} not divisible by token-grid side {side}"
                )
        if self.max_seq < expected_length(spec) + 2:
            raise InputError(
                f"max_seq {self.max_seq} leaves no room after the "
                f"{expected_length(spec)}-token visual prefix"
            )
        if not 0 <= self.eos_id < self.vocab_size:
            raise InputError(f"eos_id {self.eos_id} outside vocab")
        if self.sep_embed_id < 0:
            raise InputError("sep_embed_id must be >= 0")

    def grid(self) -> GridSpec:
        return GridSpec(side=self.feature_side, crop_rows=self.crop_rows, crop_cols=self.crop_cols)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def ffn_dim(self) -> int:
        return 4 * self.embed_dim

    @property
    def n_visual(self) -> int:
        return expected_length(self.grid())

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        try:
            kwargs = {f.name: int(obj[f.name]) for f in fields(cls)}
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad model config: {exc}") from None
        return cls(**kwargs)


@dataclass(frozen=True)
class GuidanceParams:
    """Contrastive-guidance knobs for a dual-branch decode.

    ``alpha`` scales masked visual embeddings down in the unguided branch,
    ``beta`` multiplies pre-normalized attention weight onto masked key
    positions in the guided branch, and ``gamma`` sets the mixing intensity
    of the two branches' log-probabilities at each step.
    """

    spec: GridSpec
    alpha: float = 0.01
    beta: float = 5.0
    gamma: float = 1.5
    tau: float = 0.0
    max_tokens: int = 16
    eos_id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 1.0:
            raise InputError(f"beta must be >= 1, got {self.beta}")
        if self.gamma < 0.0:
            raise InputError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.tau < 1.0:
            raise InputError(f"tau must lie in [0, 1), got {self.tau}")
        if self.max_tokens < 1:
            raise InputError("max_tokens must be >= 1")
        if self.eos_id < 0:
            raise InputError("eos_id must be >= 0")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "tau": self.tau,
            "L": self.spec.side,
            "G": [self.spec.crop_rows, self.spec.crop_cols],
            "max_tokens": self.max_tokens,
            "eos_id": self.eos_id,
        }
