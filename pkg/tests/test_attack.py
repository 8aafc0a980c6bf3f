import numpy as np
import pytest

from robustasr import autodiff as ad
from robustasr.attack import (
    AttackConfig,
    PerturbationResult,
    adv_loss,
    calibrate,
    l2_step,
    pgd_attack,
    pgd_step,
    project_l2,
    target_feasible,
)
from robustasr.losses import CtcInfeasibleError, MtlWeights, ctc_loss, dec_loss
from robustasr.model import ModelConfig, ctc_head, encode, init_params

TINY = ModelConfig(feat_dim=3, enc_hidden=4, enc_layers=1, dec_hidden=4,
                   attn_dim=3, emb_dim=3, vocab_size=4, disc_hidden=4, seed=5)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture()
def params():
    return init_params(TINY)


def test_config_validation():
    w = MtlWeights(1.0, 0.5)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.0, alpha=0.1, steps=5, weights=w)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=1.0, alpha=-1.0, steps=5, weights=w)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=1.0, alpha=0.1, steps=5, weights=w, report_at=(9,))
    cfg = AttackConfig(epsilon=1.0, alpha=0.1, steps=5, weights=w,
                       report_at=(5, 0))
    assert cfg.report_at == (0, 5)


def test_adv_loss_boundaries(params):
    rng = np.random.default_rng(1)
    x_np = rng.normal(size=(6, TINY.feat_dim))
    target = [1, 2]
    x = ad.constant(x_np)
    dec_only = adv_loss(params, x, target, MtlWeights(1.0, 0.5, lambda_i_C=0.0))
    assert dec_only.item() == pytest.approx(
        dec_loss(params, encode(params, x), target).item(), abs=1e-12)
    ctc_only = adv_loss(params, x, target, MtlWeights(1.0, 0.5, lambda_i_C=1.0))
    assert ctc_only.item() == pytest.approx(
        ctc_loss(ctc_head(params, encode(params, x)), target).item(), abs=1e-12)


def test_adv_loss_input_gradient_matches_fd(params):
    rng = np.random.default_rng(2)
    x = ad.leaf(rng.normal(size=(5, TINY.feat_dim)))
    w = MtlWeights(1.0, 0.5, lambda_i_C=0.6)

    def f(t):
        return adv_loss(params, t, [0, 3], w)

    with ad.tape():
        ad.backward(f(x))
    fd = ad.fd_gradient(f, x)
    assert rel_err(x.grad, fd.data) < 1e-6


def test_adv_loss_infeasible_target(params):
    x = ad.constant(np.zeros((2, TINY.feat_dim)))
    with pytest.raises(CtcInfeasibleError):
        adv_loss(params, x, [0, 1, 2], MtlWeights(1.0, 1.0))
    assert not target_feasible(np.zeros((2, TINY.feat_dim)), [0, 1, 2],
                               MtlWeights(1.0, 1.0))
    assert target_feasible(np.zeros((2, TINY.feat_dim)), [0, 1, 2],
                           MtlWeights(1.0, 0.0, lambda_i_C=0.0))


def test_project_l2():
    inside = np.array([1.0, 0.0])
    assert np.array_equal(project_l2(inside, 2.0), inside)
    out = project_l2(np.array([3.0, 4.0]), 2.0)
    assert np.allclose(out, [1.2, 1.6], atol=1e-12)
    zero = np.zeros(3)
    assert np.array_equal(project_l2(zero, 2.0), zero)


def test_l2_step_quadratic_moves_alpha_toward_target():
    # loss = 0.5 * ||x - t||^2 has gradient x - t
    x = np.array([3.0, 0.0])
    t = np.array([0.0, 0.0])
    delta = np.zeros(2)
    alpha = 0.25
    new_delta, step_norm = l2_step(delta, x + delta - t, epsilon=10.0, alpha=alpha)
    moved = np.linalg.norm((x + new_delta) - x)
    assert moved == pytest.approx(alpha, abs=1e-12)
    # strictly toward the target
    assert np.linalg.norm(x + new_delta - t) == pytest.approx(3.0 - alpha, abs=1e-12)
    assert step_norm == pytest.approx(alpha, abs=1e-12)


def test_l2_step_zero_alpha_and_zero_grad():
    delta = np.array([0.5, 0.5])
    same, norm = l2_step(delta, np.array([1.0, 1.0]), epsilon=1.0, alpha=0.0)
    assert np.array_equal(same, delta) and norm == 0.0
    same2, norm2 = l2_step(delta, np.zeros(2), epsilon=1.0, alpha=0.3)
    assert np.array_equal(same2, delta) and norm2 == 0.0


def test_pgd_step_magnitude_exact(params):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, TINY.feat_dim))
    cfg = AttackConfig(epsilon=5.0, alpha=0.05, steps=1,
                       weights=MtlWeights(1.0, 0.5))
    out = pgd_step(params, x, np.zeros_like(x), [1], cfg)
    assert out.grad_norm > 0
    assert abs(out.step_norm - cfg.alpha) < 1e-12
    # with a huge ball, the projected move equals the raw step
    assert np.linalg.norm(out.delta) == pytest.approx(cfg.alpha, abs=1e-12)


def test_pgd_attack_zero_steps_is_identity(params):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, TINY.feat_dim))
    cfg = AttackConfig(epsilon=1.0, alpha=0.1, steps=0,
                       weights=MtlWeights(1.0, 0.0, lambda_i_C=0.0))
    res = pgd_attack(params, x, [2], cfg)
    assert np.array_equal(res.x_adv, x)
    assert np.array_equal(res.delta, np.zeros_like(x))
    assert len(res.loss_trace) == 1 and np.isfinite(res.loss_trace[0])


def test_pgd_attack_invariants_and_determinism(params):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, TINY.feat_dim))
    cfg = AttackConfig(epsilon=0.3, alpha=0.05, steps=25,
                       weights=MtlWeights(1.0, 0.5), report_at=(0, 10, 25))

    def run():
        return pgd_attack(params, x, [0, 2], cfg)

    res = run()
    assert all(np.isfinite(v) for v in res.loss_trace)
    assert len(res.loss_trace) == cfg.steps + 1
    assert all(n <= cfg.epsilon + 1e-9 for n in res.delta_norms)
    assert all(abs(s - cfg.alpha) < 1e-12 for s in res.step_norms)
    assert np.linalg.norm(res.x_adv - x) <= cfg.epsilon + 1e-9
    assert np.array_equal(res.x_adv, x + res.delta)
    assert set(res.snapshots) == {0, 10, 25}
    assert np.array_equal(res.snapshots[0], x)
    res2 = run()
    assert np.array_equal(res.x_adv, res2.x_adv)
    assert res.loss_trace == res2.loss_trace


def test_calibrate_uses_median_norm():
    class Utt:
        def __init__(self, f):
            self.features = f

    utts = [Utt(np.ones((1, 4)) * s) for s in (1.0, 2.0, 3.0)]
    eps, alpha = calibrate(utts, ratio=0.1)
    assert eps == pytest.approx(0.1 * np.linalg.norm(np.ones((1, 4)) * 2))
    assert alpha == pytest.approx(eps / 40.0)
