"""Task losses and their weighted blends, plus a brute-force CTC oracle.

The CTC loss runs the standard forward recursion over the blank-extended
label sequence entirely in log space. Unreachable lattice states carry a
large negative sentinel instead of -inf: at double precision the
sentinel's contribution underflows to exactly zero in every logsumexp,
so values and gradients are bit-for-bit what a true -inf would give
while every tensor stays finite.

Normalization: CTC divides by the label count, the decoder loss by the
number of output steps (targets plus eos). This keeps the mixing weights
scale-balanced across heads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelParams, decoder_advance, decoder_start, discriminate

NEG = -1.0e9  # exact log(0) stand-in; exp(NEG - x) == 0.0 for any sane x


class CtcInfeasibleError(Exception):
    """The target cannot be aligned to this many frames."""


@dataclass(frozen=True)
class MtlWeights:
    """Training mix (ASR vs discriminator, CTC vs decoder) and inference mix.

    The inference weight defaults to the CTC training weight, matching
    the usual hybrid-inference convention.
    """

    lambda_t_A: float = 1.0
    lambda_t_C: float = 0.5
    lambda_i_C: float | None = None

    def __post_init__(self):
        if self.lambda_i_C is None:
            object.__setattr__(self, "lambda_i_C", self.lambda_t_C)
        for name in ("lambda_t_A", "lambda_t_C", "lambda_i_C"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class LossBreakdown:
    """Scalar loss components in nats; ``total`` is the differentiable blend."""

    l_ctc: float
    l_dec: float
    l_dis: float
    l_asr: float
    l_mtl: float
    total: "Tensor | float" = field(repr=False, default=0.0)


def _as_float(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


def ctc_min_frames(y: Sequence[int]) -> int:
    """Shortest frame count that can emit ``y`` (repeats need a blank between)."""
    return len(y) + sum(1 for i in range(1, len(y)) if y[i] == y[i - 1])


def ctc_loss(logp: Tensor, y: Sequence[int]) -> Tensor:
    """Negative log-probability of all alignments collapsing to ``y``.

    ``logp`` is a (T, V+1) matrix of per-frame log-probs with blank in
    the last column; ``y`` holds word ids only. Normalized by ``|y|``.
    """
    t_frames, width = logp.shape
    blank = width - 1
    y = list(y)
    if any(tok < 0 or tok >= blank for tok in y):
        raise ValueError("CTC targets must be word ids (no blank/eos)")
    if t_frames < ctc_min_frames(y):
        raise CtcInfeasibleError(
            f"{len(y)} labels need >= {ctc_min_frames(y)} frames, got {t_frames}")
    if not y:
        # all-blank alignment is the only path
        total = ad.sum_(logp[:, blank])
        return ad.neg(total)

    ext = [blank]
    for tok in y:
        ext.extend((tok, blank))
    n_states = len(ext)
    ext_idx = np.array(ext)
    # states reachable by a skip from two back: odd (label) states whose
    # label differs from the previous label
    skip_ok = np.zeros(n_states)
    for s in range(3, n_states, 2):
        if ext[s] != ext[s - 2]:
            skip_ok[s] = 1.0
    skip_mask = ad.constant(skip_ok.reshape(1, n_states))
    skip_bias = ad.constant(((1.0 - skip_ok) * NEG).reshape(1, n_states))

    start = np.zeros(n_states)
    start[:2] = 1.0
    start_mask = ad.constant(start.reshape(1, n_states))
    start_bias = ad.constant(((1.0 - start) * NEG).reshape(1, n_states))

    pad1 = ad.constant(np.full((1, 1), NEG))
    pad2 = ad.constant(np.full((1, 2), NEG))

    emis0 = logp[0:1, ext_idx]
    alpha = ad.add(ad.mul(emis0, start_mask), start_bias)
    for t in range(1, t_frames):
        shifted1 = ad.concat([pad1, alpha[:, : n_states - 1]], axis=1)
        shifted2 = ad.concat([pad2, alpha[:, : n_states - 2]], axis=1)
        shifted2 = ad.add(ad.mul(shifted2, skip_mask), skip_bias)
        stacked = ad.concat([alpha, shifted1, shifted2], axis=0)
        combined = ad.logsumexp(stacked, axis=0, keepdims=True)
        alpha = ad.add(combined, logp[t:t + 1, ext_idx])
    tail = ad.logsumexp(alpha[:, n_states - 2:])
    return ad.mul(ad.neg(tail), 1.0 / len(y))


def ctc_brute_force(logp, y: Sequence[int]) -> float:
    """Enumerate every frame-label path and sum those collapsing to ``y``.

    Test oracle only; refuses instances above a million paths. Uses the
    same per-label normalization as ``ctc_loss``.
    """
    lp = logp.data if isinstance(logp, Tensor) else np.asarray(logp, dtype=float)
    t_frames, width = lp.shape
    if width ** t_frames > 10 ** 6:
        raise ValueError(f"{width}^{t_frames} paths is too large to enumerate")
    blank = width - 1
    target = tuple(y)
    prob = 0.0
    for path in itertools.product(range(width), repeat=t_frames):
        prev = None
        collapsed = []
        for lab in path:
            if lab != prev and lab != blank:
                collapsed.append(lab)
            prev = lab
        if tuple(collapsed) == target:
            prob += math.exp(sum(lp[t, lab] for t, lab in enumerate(path)))
    if prob <= 0.0:
        raise CtcInfeasibleError(f"no path collapses to {target}")
    return -math.log(prob) / max(1, len(target))


def dec_loss(params: ModelParams, hidden: Tensor, y: Sequence[int]) -> Tensor:
    """Teacher-forced decoder negative log-likelihood, averaged per step.

    An empty ``y`` is legal and means "predict eos immediately".
    """
    cfg = params.config
    y = list(y)
    if any(tok < 0 or tok >= cfg.vocab_size for tok in y):
        raise ValueError("decoder targets must be word ids (no special tokens)")
    inputs = [cfg.sos] + y
    targets = y + [cfg.eos]
    state = decoder_start(params, hidden)
    picked = []
    for tok_in, tgt in zip(inputs, targets):
        logp, state = decoder_advance(params, hidden, state, tok_in)
        picked.append(ad.reshape(logp[tgt], (1,)))
    total = ad.sum_(ad.concat(picked))
    return ad.mul(ad.neg(total), 1.0 / len(targets))


def dis_loss(params: ModelParams, hidden: Tensor, accent: int) -> Tensor:
    """Cross-entropy of the accent discriminator head."""
    if not 0 <= accent < params.config.n_accents:
        raise ValueError(f"accent label {accent} out of range")
    return ad.neg(discriminate(params, hidden)[accent])


def asr_loss(weights: MtlWeights, l_ctc, l_dec):
    """CTC/decoder blend with the training weight."""
    lam = weights.lambda_t_C
    return lam * l_ctc + (1.0 - lam) * l_dec


def mtl_loss(weights: MtlWeights, l_ctc, l_dec, l_dis) -> LossBreakdown:
    """Full training objective: ASR blend against the discriminator.

    Components may be scalar tensors or plain floats (pass 0.0 for a
    head the weights switch off entirely); ``total`` stays differentiable
    whenever any live component is a tensor.
    """
    l_asr = asr_loss(weights, l_ctc, l_dec)
    lam = weights.lambda_t_A
    total = lam * l_asr + (1.0 - lam) * l_dis
    return LossBreakdown(
        l_ctc=_as_float(l_ctc),
        l_dec=_as_float(l_dec),
        l_dis=_as_float(l_dis),
        l_asr=_as_float(l_asr),
        l_mtl=_as_float(total),
        total=total,
    )
