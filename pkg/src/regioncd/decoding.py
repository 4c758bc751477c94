"""Dual-branch contrastive decoding guided by a region token mask.

The guidance acts at three levels. Token level: the unguided branch sees
masked visual embeddings scaled down by ``alpha``. Attention level: the
guided branch multiplies pre-normalized attention weight on masked key
positions by ``beta`` inside every softmax. Logits level: the two branches'
per-step log-probabilities are combined as
``(1 - gamma) * unguided + gamma * guided`` and the argmax token (lowest id
on ties) is emitted, so gamma > 1 actively pushes away from the unguided
distribution. Both branches always consume the same generated prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from regioncd.config import GuidanceParams, ModelConfig
from regioncd.errors import InputError, ShapeError
from regioncd.masks import SegMask, TokenMask, generate_token_mask
from regioncd.model import DecoderSession, GrayImage, VisualSequence, encode_image
from regioncd.weights import WeightSet

DEFAULT_TOPK = 5


def suppress_tokens(visual: VisualSequence, mask: TokenMask, alpha: float) -> VisualSequence:
    """Scale the embeddings at masked positions by ``alpha`` (pure)."""
    if len(visual) != len(mask.values):
        raise ShapeError(f"visual length {len(visual)} != mask length {len(mask.values)}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    emb = visual.embeddings.copy()
    rows = mask.values != 0
    emb[rows] *= alpha
    return VisualSequence(embeddings=emb, layout=list(visual.layout))


def reweight_attention(scores: np.ndarray, mask_row: np.ndarray, beta: float) -> np.ndarray:
    """Softmax with masked positions' pre-normalized weight multiplied by beta.

    Computed as ``beta^m * exp(e - e_max)`` then normalized; the shift only
    stabilizes the exponentials and cancels in the ratio.
    """
    e = np.asarray(scores, dtype=np.float64)
    m = np.asarray(mask_row)
    if e.ndim != 1 or e.shape != m.shape:
        raise ShapeError(f"scores shape {e.shape} and mask shape {m.shape} must be equal 1-D")
    if e.size == 0:
        raise InputError("attention row must be non-empty")
    if not np.isfinite(e).all():
        raise InputError("attention scores must be finite")
    if beta < 1.0:
        raise InputError(f"beta must be >= 1, got {beta}")
    factors = np.where(m != 0, float(beta), 1.0)
    shifted = factors * np.exp(e - e.max())
    return shifted / shifted.sum()


def fuse_logits(
    logprob_guided: np.ndarray, logprob_unguided: np.ndarray, gamma: float
) -> np.ndarray:
    """Combine branch log-probabilities: (1-gamma)*unguided + gamma*guided.

    The result is an unnormalized score vector; it is argmax-valid as is and
    only needs a log-softmax if renormalized for sampling.
    """
    g = np.asarray(logprob_guided, dtype=np.float64)
    u = np.asarray(logprob_unguided, dtype=np.float64)
    if g.shape != u.shape:
        raise ShapeError(f"branch vectors disagree in shape: {g.shape} vs {u.shape}")
    return (1.0 - gamma) * u + gamma * g


def extend_mask(mask: TokenMask, total_positions: int) -> np.ndarray:
    """Mask over a full sequence: visual positions copy, text positions 0."""
    n = len(mask.values)
    if total_positions < n:
        raise InputError(f"total positions {total_positions} shorter than visual prefix {n}")
    out = np.zeros(total_positions, dtype=np.uint8)
    out[:n] = mask.values
    return out


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def _topk(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    # stable sort on negated scores: ties keep ascending token id
    order = np.argsort(-scores, kind="stable")[: max(k, 0)]
    return [(int(i), float(scores[i])) for i in order]


@dataclass
class StepRecord:
    t: int
    guided_topk: list[tuple[int, float]]
    unguided_topk: list[tuple[int, float]]
    fused_topk: list[tuple[int, float]]
    chosen: int

    def to_json_obj(self) -> dict:
        return {
            "t": self.t,
            "guided_topk": [[i, v] for i, v in self.guided_topk],
            "unguided_topk": [[i, v] for i, v in self.unguided_topk],
            "fused_topk": [[i, v] for i, v in self.fused_topk],
            "chosen": self.chosen,
        }


@dataclass
class DecodeTrace:
    """Per-step record of both branches, for auditing a decode."""

    params: dict
    config: dict
    fixture_digest: str
    mask_digest: str | None
    topk: int
    mode: str = "guided"
    steps: list[StepRecord] = field(default_factory=list)

    def header_obj(self) -> dict:
        return {
            "mode": self.mode,
            "params": self.params,
            "config": self.config,
            "fixture_digest": self.fixture_digest,
            "mask_digest": self.mask_digest,
            "topk": self.topk,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header_obj(), sort_keys=True, separators=(",", ":"))]
        lines += [
            json.dumps(s.to_json_obj(), sort_keys=True, separators=(",", ":"))
            for s in self.steps
        ]
        return "\n".join(lines) + "\n"


def _greedy_pick(scores: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest token id on ties
    return int(np.argmax(scores))


def decode(
    img: GrayImage,
    seg: SegMask,
    prompt: list[int],
    cfg: ModelConfig,
    w: WeightSet,
    params: GuidanceParams,
    topk: int = DEFAULT_TOPK,
    sample: bool = False,
    temperature: float = 1.0,
    seed: int = 0,
) -> tuple[list[int], DecodeTrace]:
    """Run the dual-branch guided decode; returns (generated ids, trace).

    Greedy by default; with ``sample=True`` the fused scores are
    renormalized by log-softmax and the next token drawn at the given
    temperature (seeded, reproducible).
    """
    if not prompt:
        raise InputError("prompt must be non-empty")
    if params.spec != cfg.grid():
        raise InputError(
            f"guidance grid {params.spec} does not match the model grid {cfg.grid()}"
        )
    if cfg.n_visual + len(prompt) + params.max_tokens > cfg.max_seq:
        raise InputError(
            f"visual prefix + prompt + max_tokens exceeds max_seq {cfg.max_seq}"
        )
    mask = generate_token_mask(seg, params.spec, params.tau)
    visual = encode_image(img, cfg, w)
    policy = (extend_mask(mask, len(mask.values)), params.beta)
    guided = DecoderSession(cfg, w, visual, attn_policy=policy)
    unguided = DecoderSession(cfg, w, suppress_tokens(visual, mask, params.alpha))

    trace = DecodeTrace(
        params=params.to_dict(),
        config=cfg.to_dict(),
        fixture_digest=w.digest(),
        mask_digest=mask.digest(),
        topk=topk,
    )
    rng = np.random.default_rng(seed) if sample else None

    logits_g = guided.extend_with_tokens(prompt)
    logits_u = unguided.extend_with_tokens(prompt)
    out: list[int] = []
    for t in range(params.max_tokens):
        assert guided.text_ids == unguided.text_ids, "branch prefixes diverged"
        lp_g = log_softmax(logits_g)
        lp_u = log_softmax(logits_u)
        fused = fuse_logits(lp_g, lp_u, params.gamma)
        if rng is not None:
            if temperature <= 0.0:
                raise InputError("temperature must be positive when sampling")
            probs = np.exp(log_softmax(fused / temperature))
            chosen = int(rng.choice(cfg.vocab_size, p=probs / probs.sum()))
        else:
            chosen = _greedy_pick(fused)
        trace.steps.append(
            StepRecord(
                t=t,
                guided_topk=_topk(lp_g, topk),
                unguided_topk=_topk(lp_u, topk),
                fused_topk=_topk(fused, topk),
                chosen=chosen,
            )
        )
        out.append(chosen)
        if chosen == params.eos_id or t + 1 == params.max_tokens:
            break
        logits_g = guided.extend_with_tokens([chosen])
        logits_u = unguided.extend_with_tokens([chosen])
    return out, trace


def baseline_decode(
    img: GrayImage,
    prompt: list[int],
    cfg: ModelConfig,
    w: WeightSet,
    max_tokens: int,
    eos_id: int,
    topk: int = DEFAULT_TOPK,
) -> tuple[list[int], DecodeTrace]:
    """Plain single-branch greedy decoding, the unguided reference."""
    if not prompt:
        raise InputError("prompt must be non-empty")
    if cfg.n_visual + len(prompt) + max_tokens > cfg.max_seq:
        raise InputError(f"visual prefix + prompt + max_tokens exceeds max_seq {cfg.max_seq}")
    visual = encode_image(img, cfg, w)
    session = DecoderSession(cfg, w, visual)
    trace = DecodeTrace(
        params={"max_tokens": max_tokens, "eos_id": eos_id},
        config=cfg.to_dict(),
        fixture_digest=w.digest(),
        mask_digest=None,
        topk=topk,
        mode="baseline",
    )
    logits = session.extend_with_tokens(prompt)
    out: list[int] = []
    for t in range(max_tokens):
        lp = log_softmax(logits)
        chosen = _greedy_pick(lp)
        entries = _topk(lp, topk)
        trace.steps.append(
            StepRecord(t=t, guided_topk=entries, unguided_topk=entries, fused_topk=entries,
                       chosen=chosen)
        )
        out.append(chosen)
        if chosen == eos_id or t + 1 == max_tokens:
            break
        logits = session.extend_with_tokens([chosen])
    return out, trace


@dataclass
class SweepRow:
    beta: float
    gamma: float
    output_ids: list[int]
    step1_margin: float


def sweep(
    img: GrayImage,
    seg: SegMask,
    prompt: list[int],
    cfg: ModelConfig,
    w: WeightSet,
    beta_list: list[float],
    gamma_list: list[float],
    params: GuidanceParams,
) -> list[SweepRow]:
    """One decode per (beta, gamma) pair, beta-major row order.

    ``step1_margin`` is the gap between the best and second-best fused
    scores at the first step, a scalar view of how decisively the guidance
    separates the top candidates.
    """
    if not beta_list or not gamma_list:
        raise InputError("beta and gamma lists must be non-empty")
    rows = []
    for beta in beta_list:
        for gamma in gamma_list:
            run = GuidanceParams(
                spec=params.spec,
                alpha=params.alpha,
                beta=beta,
                gamma=gamma,
                tau=params.tau,
                max_tokens=params.max_tokens,
                eos_id=params.eos_id,
            )
            ids, trace = decode(img, seg, prompt, cfg, w, run, topk=max(2, DEFAULT_TOPK))
            fused = trace.steps[0].fused_topk
            margin = fused[0][1] - fused[1][1]
            rows.append(SweepRow(beta=float(beta), gamma=float(gamma), output_ids=ids,
                                 step1_margin=margin))
    return rows


def sweep_to_csv(rows: list[SweepRow]) -> str:
    """CSV with '.' decimals and LF endings; byte-deterministic."""
    lines = ["beta,gamma,output_ids,step1_margin"]
    for r in rows:
        ids = " ".join(str(i) for i in r.output_ids)
        lines.append(f"{r.beta!r},{r.gamma!r},{ids},{r.step1_margin!r}")
    return "\n".join(lines) + "\n"
