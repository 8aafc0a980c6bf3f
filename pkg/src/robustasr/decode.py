"""Greedy inference per head and step-synchronous hybrid decoding.

The hybrid decoder mixes, in the log domain, the incremental CTC prefix
score with the decoder's next-token log-prob at every step (beam width
is fixed at one). At the mixing boundaries it collapses exactly onto the
single-head decoders; with the CTC weight at zero the prefix scorer is
never even constructed, which is the "drop the CTC head at inference"
remedy made structural.

Candidate indices run over words ``0..V-1`` plus ``V`` for eos.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import MtlWeights
from .model import ModelParams, ctc_head, decoder_advance, decoder_start

NEGINF = -np.inf


def _as_array(logp) -> np.ndarray:
    return logp.data if isinstance(logp, Tensor) else np.asarray(logp, dtype=float)


def greedy_ctc_decode(logp) -> tuple[int, ...]:
    """Frame-wise argmax, collapse repeats, drop blanks."""
    lp = _as_array(logp)
    blank = lp.shape[1] - 1
    best = lp.argmax(axis=1)
    out = []
    prev = None
    for lab in best:
        if lab != prev and lab != blank:
            out.append(int(lab))
        prev = lab
    return tuple(out)


@dataclass
class PrefixState:
    """Per-hypothesis CTC bookkeeping for one utterance."""

    prefix: tuple[int, ...]
    psi: float  # log P(output begins with prefix)
    r_n: np.ndarray  # (T,) log P(paths collapsing exactly to prefix, non-blank end)
    r_b: np.ndarray  # (T,) same but blank-ending


class CtcPrefixScorer:
    """Incremental two-state CTC prefix probabilities over one log-prob matrix.

    ``evaluations`` counts scoring passes across all instances; tests use
    it to prove the decoder-only path never touches CTC scoring.
    """

    evaluations = 0

    def __init__(self, logp):
        self.x = _as_array(logp)
        self.n_frames, width = self.x.shape
        self.blank = width - 1
        self.n_words = width - 1

    def initial_state(self) -> PrefixState:
        r_b = np.cumsum(self.x[:, self.blank])
        r_n = np.full(self.n_frames, NEGINF)
        return PrefixState(prefix=(), psi=0.0, r_n=r_n, r_b=r_b)

    def extend(self, state: PrefixState):
        """Score every one-word extension plus termination.

        Returns ``(psi, eos_score, r_n, r_b)`` where ``psi[c]`` is the
        absolute log-probability that the output begins with
        ``state.prefix + (c,)``, ``eos_score`` the log-probability that
        the output equals ``state.prefix`` exactly, and the r-matrices
        are (T, V) slices of the extended hypotheses' path states.
        """
        type(self).evaluations += 1
        n, v = self.n_frames, self.n_words
        xw = self.x[:, :v]
        xb = self.x[:, self.blank]
        with np.errstate(invalid="ignore"):
            r_sum = np.logaddexp(state.r_b, state.r_n)
        phi = np.repeat(r_sum[:, None], v, axis=1)
        if state.prefix:
            phi[:, state.prefix[-1]] = state.r_b
        r_n = np.full((n, v), NEGINF)
        r_b = np.full((n, v), NEGINF)
        if not state.prefix:
            r_n[0] = xw[0]
        psi = r_n[0].copy()
        with np.errstate(invalid="ignore"):
            for t in range(1, n):
                r_n[t] = xw[t] + np.logaddexp(r_n[t - 1], phi[t - 1])
                r_b[t] = xb[t] + np.logaddexp(r_b[t - 1], r_n[t - 1])
                psi = np.logaddexp(psi, phi[t - 1] + xw[t])
        eos_score = float(np.logaddexp(state.r_b[-1], state.r_n[-1]))
        return psi, eos_score, r_n, r_b

    def advance(self, state: PrefixState, token: int, psi, r_n, r_b) -> PrefixState:
        return PrefixState(prefix=state.prefix + (token,),
                           psi=float(psi[token]),
                           r_n=r_n[:, token].copy(),
                           r_b=r_b[:, token].copy())


def ctc_prefix_score(logp, prefix: Sequence[int], candidate: int) -> float:
    """Absolute CTC prefix log-probability of one extension.

    For a word candidate this is log P(output begins with prefix+word);
    for the eos index (= V) it is log P(output equals the prefix). An
    unreachable prefix scores -inf.
    """
    scorer = CtcPrefixScorer(logp)
    state = scorer.initial_state()
    for tok in prefix:
        psi, _eos, r_n, r_b = scorer.extend(state)
        state = scorer.advance(state, tok, psi, r_n, r_b)
    psi, eos_score, _rn, _rb = scorer.extend(state)
    if candidate == scorer.n_words:
        return eos_score
    return float(psi[candidate])


@dataclass
class DecodeResult:
    hypothesis: tuple[int, ...]
    per_step_scores: list[tuple[float, float, float]]  # (ctc, dec, combined)


def greedy_attention_decode(params: ModelParams, hidden: Tensor,
                            max_len: int) -> tuple[int, ...]:
    """Argmax decoding with the attention head; stops at eos or max_len."""
    return _attention_decode(params, hidden, max_len).hypothesis


def _attention_decode(params: ModelParams, hidden: Tensor,
                      max_len: int) -> DecodeResult:
    cfg = params.config
    hyp: list[int] = []
    steps: list[tuple[float, float, float]] = []
    with ad.no_grad():
        state = decoder_start(params, hidden)
        token = cfg.sos
        for _ in range(max_len):
            logp, state = decoder_advance(params, hidden, state, token)
            c = int(np.argmax(logp.data))
            val = float(logp.data[c])
            steps.append((0.0, val, val))
            if c == cfg.eos:
                break
            hyp.append(c)
            token = c
    return DecodeResult(hypothesis=tuple(hyp), per_step_scores=steps)


def joint_greedy_decode(params: ModelParams, hidden: Tensor,
                        weights: MtlWeights, max_len: int) -> DecodeResult:
    """Beam-1 hybrid decoding mixing CTC prefix scores and decoder scores.

    The CTC component of each step is the increment of the prefix score,
    so it is commensurable with the decoder's per-step log-prob; the
    argmax is unaffected by that choice. ``lambda_i_C`` 0 and 1
    reproduce the attention-only and prefix-greedy CTC decoders.
    """
    lam = weights.lambda_i_C
    if lam == 0.0:
        return _attention_decode(params, hidden, max_len)
    cfg = params.config
    with ad.no_grad():
        logp = ctc_head(params, hidden)
        scorer = CtcPrefixScorer(logp)
        state = scorer.initial_state()
        dec_state = decoder_start(params, hidden) if lam < 1.0 else None
        token = cfg.sos
        hyp: list[int] = []
        steps: list[tuple[float, float, float]] = []
        for _ in range(max_len):
            psi, eos_score, r_n, r_b = scorer.extend(state)
            ctc_inc = np.append(psi, eos_score) - state.psi
            if dec_state is not None:
                dec_logp, dec_state_next = decoder_advance(
                    params, hidden, dec_state, token)
                dec_scores = dec_logp.data
            else:
                dec_state_next = None
                dec_scores = np.zeros(cfg.vocab_size + 1)
            with np.errstate(invalid="ignore"):
                combined = lam * ctc_inc + (1.0 - lam) * dec_scores
            c = int(np.argmax(combined))
            steps.append((float(ctc_inc[c]), float(dec_scores[c]),
                          float(combined[c])))
            if c == cfg.eos:
                break
            hyp.append(c)
            state = scorer.advance(state, c, psi, r_n, r_b)
            dec_state = dec_state_next
            token = c
    return DecodeResult(hypothesis=tuple(hyp), per_step_scores=steps)
