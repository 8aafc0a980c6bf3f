import itertools
import math

import numpy as np
import pytest

from robustasr import autodiff as ad
from robustasr.decode import (
    CtcPrefixScorer,
    DecodeResult,
    ctc_prefix_score,
    greedy_attention_decode,
    greedy_ctc_decode,
    joint_greedy_decode,
)
from robustasr.losses import MtlWeights
from robustasr.model import ModelConfig, encode, init_params

TINY = ModelConfig(feat_dim=3, enc_hidden=4, enc_layers=1, dec_hidden=4,
                   attn_dim=3, emb_dim=3, vocab_size=4, disc_hidden=4, seed=3)


def norm_logp(raw):
    raw = np.asarray(raw, dtype=float)
    m = raw.max(axis=1, keepdims=True)
    return raw - m - np.log(np.exp(raw - m).sum(axis=1, keepdims=True))


def peaked_logp(frame_peaks, width, strength=8.0):
    raw = np.zeros((len(frame_peaks), width))
    for t, lab in enumerate(frame_peaks):
        raw[t, lab] = strength
    return norm_logp(raw)


# --- frame-greedy CTC -------------------------------------------------------


def test_greedy_ctc_collapse():
    # blank is the last column (index 2 for one word pair a=0, b=1)
    lp = peaked_logp([2, 0, 0, 2, 1], 3)
    assert greedy_ctc_decode(lp) == (0, 1)


def test_greedy_ctc_all_blank_empty():
    lp = peaked_logp([2, 2, 2], 3)
    assert greedy_ctc_decode(lp) == ()


def test_greedy_ctc_blank_separates_repeats():
    lp = peaked_logp([0, 2, 0], 3)
    assert greedy_ctc_decode(lp) == (0, 0)


# --- CTC prefix scoring ------------------------------------------------------


def brute_begins_with(lp, prefix):
    """P(collapsed output begins with prefix), by full path enumeration."""
    t_frames, width = lp.shape
    blank = width - 1
    total = 0.0
    for path in itertools.product(range(width), repeat=t_frames):
        prev = None
        out = []
        for lab in path:
            if lab != prev and lab != blank:
                out.append(lab)
            prev = lab
        if tuple(out[:len(prefix)]) == tuple(prefix):
            total += math.exp(sum(lp[t, lab] for t, lab in enumerate(path)))
    return total


def brute_equals(lp, seq):
    t_frames, width = lp.shape
    blank = width - 1
    total = 0.0
    for path in itertools.product(range(width), repeat=t_frames):
        prev = None
        out = []
        for lab in path:
            if lab != prev and lab != blank:
                out.append(lab)
            prev = lab
        if tuple(out) == tuple(seq):
            total += math.exp(sum(lp[t, lab] for t, lab in enumerate(path)))
    return total


def test_prefix_score_single_frame_uniform():
    lp = np.full((1, 2), -math.log(2))  # one word 'a' + blank
    assert ctc_prefix_score(lp, (), 0) == pytest.approx(math.log(0.5), abs=1e-12)
    # eos after "a": the sequence is exactly "a"
    assert ctc_prefix_score(lp, (0,), 1) == pytest.approx(math.log(0.5), abs=1e-12)


def test_prefix_score_matches_brute_force():
    rng = np.random.default_rng(71)
    for trial in range(50):
        width = int(rng.integers(2, 4))
        t = int(rng.integers(1, 5))
        lp = norm_logp(rng.normal(size=(t, width)))
        n_words = width - 1
        for plen in range(0, min(t, 3) + 1):
            prefix = tuple(rng.integers(0, n_words, size=plen))
            for cand in range(n_words + 1):
                got = ctc_prefix_score(lp, prefix, cand)
                if cand == n_words:
                    want = brute_equals(lp, prefix)
                else:
                    want = brute_begins_with(lp, prefix + (cand,))
                if want == 0.0:
                    assert got == -np.inf
                else:
                    assert abs(got - math.log(want)) < 1e-9


def test_full_sequence_probabilities_sum_to_one():
    rng = np.random.default_rng(5)
    lp = norm_logp(rng.normal(size=(3, 3)))  # 2 words + blank
    total = 0.0
    for length in range(0, 4):
        for seq in itertools.product(range(2), repeat=length):
            score = ctc_prefix_score(lp, seq, 2)  # eos index = n_words
            if score > -np.inf:
                total += math.exp(score)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_prefix_longer_than_frames_is_impossible():
    lp = np.full((1, 2), -math.log(2))
    assert ctc_prefix_score(lp, (0,), 0) == -np.inf


# --- joint decoding ----------------------------------------------------------


@pytest.fixture()
def params():
    return init_params(TINY)


def random_hidden(params, t, seed):
    rng = np.random.default_rng(seed)
    x = ad.constant(rng.normal(size=(t, TINY.feat_dim)))
    return encode(params, x)


def test_joint_at_zero_matches_attention_decode(params):
    for seed in range(20):
        h = random_hidden(params, 4 + seed % 5, seed)
        w = MtlWeights(1.0, 0.5, lambda_i_C=0.0)
        joint = joint_greedy_decode(params, h, w, max_len=6)
        att = greedy_attention_decode(params, h, max_len=6)
        assert joint.hypothesis == att


def test_joint_at_zero_never_scores_ctc(params):
    before = CtcPrefixScorer.evaluations
    h = random_hidden(params, 5, 99)
    joint_greedy_decode(params, h, MtlWeights(1.0, 0.5, lambda_i_C=0.0), max_len=6)
    assert CtcPrefixScorer.evaluations == before
    joint_greedy_decode(params, h, MtlWeights(1.0, 0.5, lambda_i_C=0.5), max_len=6)
    assert CtcPrefixScorer.evaluations > before


def test_joint_at_one_is_prefix_greedy_ctc():
    # encoder hidden = identity rows, ctc weights = the target logits, so the
    # CTC head reproduces a hand-chosen peaked matrix exactly
    cfg = ModelConfig(feat_dim=3, enc_hidden=3, enc_layers=1, dec_hidden=4,
                      attn_dim=3, emb_dim=3, vocab_size=2, disc_hidden=4, seed=4)
    params = init_params(cfg)
    raw = np.zeros((3, 3))
    raw[0, 0] = 8.0   # frame 0 peaks at word a
    raw[1, 2] = 8.0   # frame 1 peaks at blank
    raw[2, 1] = 8.0   # frame 2 peaks at word b
    params["ctc.w"].data = raw.T.copy()
    params["ctc.b"].data[...] = 0.0
    hidden = ad.constant(np.eye(3))
    lp = norm_logp(raw)

    # oracle: greedy over brute-force prefix probabilities
    prefix: tuple[int, ...] = ()
    for _ in range(5):
        scores = [brute_begins_with(lp, prefix + (c,)) for c in range(2)]
        scores.append(brute_equals(lp, prefix))
        best = int(np.argmax(scores))
        if best == 2:
            break
        prefix = prefix + (best,)

    w = MtlWeights(1.0, 1.0, lambda_i_C=1.0)
    res = joint_greedy_decode(params, hidden, w, max_len=5)
    assert res.hypothesis == prefix == (0, 1)


def test_per_step_combined_identity(params):
    for lam in (0.0, 0.3, 0.7, 1.0):
        h = random_hidden(params, 6, int(lam * 10))
        w = MtlWeights(1.0, 0.5, lambda_i_C=lam)
        res = joint_greedy_decode(params, h, w, max_len=5)
        assert res.per_step_scores
        for ctc_c, dec_c, comb in res.per_step_scores:
            assert comb == pytest.approx(lam * ctc_c + (1 - lam) * dec_c,
                                         abs=1e-12)


def test_attention_decode_eos_immediately(params):
    params["dec.w_out"].data[...] = 0.0
    params["dec.b_out"].data[...] = 0.0
    params["dec.b_out"].data[TINY.eos] = 50.0
    h = random_hidden(params, 4, 7)
    assert greedy_attention_decode(params, h, max_len=5) == ()


def test_attention_decode_max_len_cap(params):
    params["dec.w_out"].data[...] = 0.0
    params["dec.b_out"].data[...] = 0.0
    params["dec.b_out"].data[1] = 50.0  # always emit word 1, never eos
    h = random_hidden(params, 4, 8)
    hyp = greedy_attention_decode(params, h, max_len=3)
    assert hyp == (1, 1, 1)


def test_attention_decode_deterministic(params):
    h = random_hidden(params, 5, 11)
    a = greedy_attention_decode(params, h, max_len=6)
    b = greedy_attention_decode(params, h, max_len=6)
    assert a == b
