"""Learner tests.

``vtrace_oracle`` below evaluates the correction from its textbook series
definition with explicit loops; it was written before the production
recursion and stays independent of it.
"""

import numpy as np
import pytest

from gridctf import agent as agent_mod
from gridctf import learner as learner_mod
from gridctf import nn
from gridctf.agent import AgentConfig, VARIANT_FTW, VARIANT_NO_TH, init_params, reset_state, state_to_arrays
from gridctf.learner import (
    BATCH_SIZE,
    UNROLL_LENGTH,
    Learner,
    LearnerError,
    LossWeights,
    NotReady,
    ReplaySequence,
    RewardPredReplay,
    RMSProp,
    Trajectory,
    build_loss,
    clip_by_global_norm,
    compute_loss,
    reward_label,
    stack_batch,
    vtrace,
)

TINY = dict(obs_dim=6, encoder_widths=(5,), fast_hidden=4, slow_hidden=4,
            latent_dim=2, tau=5, head_hidden=4, num_actions=30)


def tiny_cfg(variant=VARIANT_FTW, **kw):
    return AgentConfig(variant=variant, **{**TINY, **kw})


# -- the independent oracle ---------------------------------------------------

def vtrace_oracle(b_lp, t_lp, rewards, values, discounts, rho_bar=1.0, c_bar=1.0):
    """Direct evaluation of the series definition:
    v_s = V(s) + sum_{t>=s} gamma^{t-s} (prod_{i<t} c_i) rho_t delta_t."""
    b, t_len = rewards.shape
    vs = np.zeros((b, t_len))
    ratios = np.exp(t_lp - b_lp)
    rhos = np.minimum(rho_bar, ratios)
    cs = np.minimum(c_bar, ratios)
    for i in range(b):
        for s in range(t_len):
            acc = values[i, s]
            weight = 1.0
            for t in range(s, t_len):
                delta = rhos[i, t] * (rewards[i, t] + discounts[i, t] * values[i, t + 1]
                                      - values[i, t])
                acc += weight * delta
                weight *= discounts[i, t] * cs[i, t]
            vs[i, s] = acc
    return vs


def random_inputs(rng, b=3, t_len=7):
    b_lp = rng.normal(size=(b, t_len)) * 0.3 - 1.0
    t_lp = b_lp + rng.normal(size=(b, t_len)) * 0.4
    rewards = rng.normal(size=(b, t_len))
    values = rng.normal(size=(b, t_len + 1))
    discounts = np.full((b, t_len), 0.95)
    mask = np.ones((b, t_len))
    return b_lp, t_lp, rewards, values, discounts, mask


def test_vtrace_matches_oracle():
    rng = np.random.default_rng(0)
    b_lp, t_lp, rewards, values, discounts, mask = random_inputs(rng)
    vs, _ = vtrace(b_lp, t_lp, rewards, values, discounts, mask)
    expected = vtrace_oracle(b_lp, t_lp, rewards, values, discounts)
    assert np.max(np.abs(vs - expected)) < 1e-8


def test_vtrace_hand_built_clipped_ratios():
    # ratios 0.5, 2.0 (clipped to 1), 1.0 on a 3-step trajectory
    b_lp = np.log(np.array([[0.4, 0.2, 0.5]]))
    t_lp = np.log(np.array([[0.2, 0.4, 0.5]]))
    rewards = np.array([[1.0, -0.5, 2.0]])
    values = np.array([[0.3, -0.1, 0.7, 0.2]])
    discounts = np.full((1, 3), 0.9)
    mask = np.ones((1, 3))
    vs, adv = vtrace(b_lp, t_lp, rewards, values, discounts, mask)
    expected = vtrace_oracle(b_lp, t_lp, rewards, values, discounts)
    assert np.allclose(vs, expected, atol=1e-12)
    ratios = np.exp(t_lp - b_lp)
    assert np.allclose(np.minimum(1.0, ratios), [[0.5, 1.0, 1.0]])


def test_vtrace_on_policy_collapses_to_nstep_return():
    rng = np.random.default_rng(1)
    lp = rng.normal(size=(2, 6))
    rewards = rng.normal(size=(2, 6))
    values = rng.normal(size=(2, 7))
    discounts = np.full((2, 6), 0.99)
    mask = np.ones((2, 6))
    vs, adv = vtrace(lp, lp.copy(), rewards, values, discounts, mask)
    # n-step bootstrapped return computed straightforwardly
    expected = np.zeros((2, 6))
    for i in range(2):
        ret = values[i, 6]
        for s in range(5, -1, -1):
            ret = rewards[i, s] + discounts[i, s] * ret
            expected[i, s] = ret
    assert np.max(np.abs(vs - expected)) < 1e-12


def test_vtrace_zero_everything():
    z = np.zeros((1, 4))
    vs, adv = vtrace(z, z, z, np.zeros((1, 5)), np.full((1, 4), 0.99), np.ones((1, 4)))
    assert np.all(vs == 0.0)
    assert np.all(adv == 0.0)


def test_vtrace_shape_mismatch():
    z = np.zeros((1, 4))
    with pytest.raises(LearnerError):
        vtrace(z, z, z, np.zeros((1, 4)), np.full((1, 4), 0.99), np.ones((1, 4)))


# -- RMSProp -------------------------------------------------------------------

def make_params(dtype=np.float64, seed=0):
    return init_params(tiny_cfg(), np.random.default_rng(seed), dtype=dtype)


def test_rmsprop_zero_gradient_no_change():
    params = make_params()
    before = {k: t.data.copy() for k, t in params.tensors.items()}
    opt = RMSProp(params)
    opt.step(params, {k: np.zeros_like(t.data) for k, t in params.tensors.items()}, lr=0.1)
    for k, t in params.tensors.items():
        assert np.array_equal(t.data, before[k])


def test_rmsprop_constant_gradient_fixed_point():
    # avg converges to g^2, so the update magnitude approaches lr * sign(g)
    params = make_params()
    opt = RMSProp(params)
    g = {k: np.full_like(t.data, 2.0) for k, t in params.tensors.items()}
    lr = 0.01
    for _ in range(2000):
        opt.step(params, g, lr)
    key = "fast.w"
    step_size = lr * 2.0 / np.sqrt(opt.avg[key] + opt.eps)
    expected = lr * 2.0 / np.sqrt(2.0**2 + opt.eps)
    assert np.allclose(step_size, expected, rtol=1e-6)
    assert np.allclose(expected, lr, rtol=1e-5)


def test_rmsprop_identical_runs():
    p1, p2 = make_params(seed=3), make_params(seed=3)
    o1, o2 = RMSProp(p1), RMSProp(p2)
    rng = np.random.default_rng(0)
    g = {k: rng.normal(size=t.data.shape) for k, t in p1.tensors.items()}
    o1.step(p1, g, 1e-3)
    o2.step(p2, g, 1e-3)
    for k in p1.tensors:
        assert np.array_equal(p1.tensors[k].data, p2.tensors[k].data)


def test_lr_zero_bitwise_unchanged():
    params = make_params()
    before = {k: t.data.copy() for k, t in params.tensors.items()}
    opt = RMSProp(params)
    rng = np.random.default_rng(0)
    g = {k: rng.normal(size=t.data.shape) for k, t in params.tensors.items()}
    opt.step(params, g, lr=0.0)
    for k, t in params.tensors.items():
        assert np.array_equal(t.data, before[k])


# -- replay ---------------------------------------------------------------------

def seq(label, seed=0):
    rng = np.random.default_rng(seed)
    return ReplaySequence(
        windows=rng.integers(0, 2, size=(3, 9, 9, 8)).astype(np.uint8),
        scalars=rng.normal(size=(3, 10)).astype(np.float32),
        label=label,
    )


def test_replay_ring_semantics():
    rp = RewardPredReplay(capacity=800)
    for i in range(801):
        rp.push(seq(2, seed=i))
    assert len(rp.nonzero) == 800
    # the newest 800 survive: seed 0 was evicted
    assert not any(s.scalars[0, 0] == seq(2, seed=0).scalars[0, 0] for s in rp.nonzero)


def test_replay_sample_shape_and_balance():
    rp = RewardPredReplay()
    for i in range(20):
        rp.push(seq(2, seed=i))
        rp.push(seq(1, seed=100 + i))
    windows, scalars, labels = rp.sample(np.random.default_rng(0))
    assert windows.shape == (32, 3, 9, 9, 8)
    assert (labels != 1).sum() == 16
    assert (labels == 1).sum() == 16


def test_replay_not_ready():
    rp = RewardPredReplay()
    for i in range(20):
        rp.push(seq(0, seed=i))
    assert not rp.ready
    with pytest.raises(NotReady):
        rp.sample(np.random.default_rng(0))


def test_reward_label():
    assert reward_label(2.0) == 2
    assert reward_label(-0.1) == 0
    assert reward_label(0.0) == 1


# -- loss -------------------------------------------------------------------------

def make_traj(cfg, seed, t_len=5, unroll=5, dtype=np.float64, reward_scale=1.0):
    r = np.random.default_rng(seed)
    st = reset_state(cfg, batch=1, dtype=dtype)
    dones = np.zeros(unroll, dtype=bool)
    mask = np.zeros(unroll, dtype=np.float32)
    mask[:t_len] = 1.0
    dones[t_len - 1] = True
    return Trajectory(
        length=t_len,
        windows=r.integers(0, 2, size=(unroll + 1, 1, 1, 1)).astype(np.uint8),
        scalars=r.normal(size=(unroll + 1, 5)).astype(np.float32),
        prev_actions=np.concatenate([[-1], r.integers(0, 30, size=unroll)]),
        prev_rewards=r.normal(size=unroll + 1).astype(np.float32),
        actions=r.integers(0, 30, size=unroll),
        rewards=(r.normal(size=unroll) * reward_scale).astype(np.float32),
        behavior_log_probs=np.full(unroll, np.log(1 / 30), dtype=np.float32),
        behavior_values=np.zeros(unroll, dtype=np.float32),
        dones=dones,
        mask=mask,
        latent_noise=r.normal(size=(unroll + 1, cfg.latent_dim)).astype(np.float64),
        init_state=state_to_arrays(st),
        policy_version=0,
        agent_id=0,
    )


def default_weights(**kw):
    base = dict(learning_rate=1e-3, entropy_cost=0.01, reward_pred_weight=0.5,
                kl_posterior_prior=0.1, kl_prior_reg=0.01, fast_to_slow_scale=0.7)
    base.update(kw)
    return LossWeights(**base)


def test_baseline_weight_fixed():
    with pytest.raises(LearnerError):
        LossWeights(baseline=0.7)
    with pytest.raises(LearnerError):
        default_weights(entropy_cost=-1.0)


def test_full_loss_gradient_matches_finite_differences():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    batch = stack_batch([make_traj(cfg, 3), make_traj(cfg, 4)])
    weights = default_weights()
    rb = (np.random.default_rng(7).integers(0, 2, size=(4, 3, 1, 1, 1)).astype(np.uint8),
          np.random.default_rng(8).normal(size=(4, 3, 5)),
          np.array([0, 1, 2, 1]))
    _, comps = build_loss(batch, params, weights, replay_batch=rb)
    targets = comps["vtrace_targets"]

    def f():
        loss, _ = build_loss(batch, params, weights, replay_batch=rb, frozen_targets=targets)
        return loss

    assert nn.grad_check(f, params.tensors, eps=1e-5) < 1e-4


def test_no_th_variant_kl_terms_zero():
    cfg = tiny_cfg(VARIANT_NO_TH)
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    batch = stack_batch([make_traj(cfg, 3)])
    _, comps = build_loss(batch, params, default_weights())
    assert comps["kl_posterior_prior"] == 0.0
    assert comps["kl_prior_reg"] == 0.0


def test_loss_additive_decomposition():
    """With auxiliary weights driven to zero the loss equals the plain
    actor-critic part (policy gradient + 0.5 value + entropy)."""
    cfg = tiny_cfg(VARIANT_NO_TH)  # KL terms are structurally zero here
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    batch = stack_batch([make_traj(cfg, 3)])
    eps = 1e-300  # weights must stay positive; this is numerically zero
    w = default_weights(kl_posterior_prior=eps, kl_prior_reg=eps, reward_pred_weight=eps)
    loss, comps = build_loss(batch, params, w)
    plain = comps["pg"] + comps["value"] - w.entropy_cost * comps["entropy"] * batch.mask.sum()
    assert np.isclose(comps["total"], plain, rtol=1e-9)


def test_loss_permutation_invariant():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    t1, t2, t3 = make_traj(cfg, 3), make_traj(cfg, 4), make_traj(cfg, 5)
    l_a, _, _ = compute_loss([t1, t2, t3], params, default_weights())
    l_b, _, _ = compute_loss([t3, t1, t2], params, default_weights())
    assert np.isclose(l_a, l_b, rtol=1e-12)


def test_loss_nonfinite_fault():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    traj = make_traj(cfg, 3)
    traj.rewards[0] = np.nan
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="components"):
        build_loss(stack_batch([traj]), params, default_weights())


def test_trajectory_validation():
    cfg = tiny_cfg()
    traj = make_traj(cfg, 3)
    traj.behavior_log_probs[0] = np.inf
    with pytest.raises(LearnerError):
        traj.validate()


def test_learner_update_changes_params_and_version():
    cfg = tiny_cfg()
    params = init_params(cfg, np.random.default_rng(1), dtype=np.float64)
    lrn = Learner(params=params, weights=default_weights(), use_reward_pred=False)
    before = params.tensors["fast.w"].data.copy()
    stats = lrn.update([make_traj(cfg, s) for s in range(4)], np.random.default_rng(0))
    assert lrn.params.policy_version == 1
    assert not np.array_equal(lrn.params.tensors["fast.w"].data, before)
    assert np.isfinite(stats["total"])


def test_clip_by_global_norm():
    grads = {"a": np.full(4, 10.0), "b": np.full(4, 10.0)}
    norm = clip_by_global_norm(grads, max_norm=10.0)
    assert norm > 10.0
    total = np.sqrt(sum((g**2).sum() for g in grads.values()))
    assert np.isclose(total, 10.0)


# -- sanity convergence: 30-armed bandit wrapped as 1-step episodes -------------

def test_bandit_convergence():
    cfg = tiny_cfg(VARIANT_NO_TH)
    params = init_params(cfg, np.random.default_rng(0), dtype=np.float64)
    weights = default_weights(learning_rate=5e-3, entropy_cost=1e-3,
                              kl_posterior_prior=1e-300, kl_prior_reg=1e-300,
                              reward_pred_weight=1e-300)
    lrn = Learner(params=params, weights=weights, use_reward_pred=False)
    act_rng = np.random.default_rng(1)
    obs = np.zeros((1, 1, 1, 1), dtype=np.uint8)
    scal = np.zeros((1, 5), dtype=np.float32)

    def play_one(seed_step):
        st = reset_state(cfg, batch=1, dtype=np.float64)
        flat = agent_mod.obs_to_arrays(obs, scal, dtype=np.float64)
        with nn.no_grad():
            u = agent_mod.encode_obs(params, flat)
            out = agent_mod.step_core(params, st, u, np.array([-1]), np.array([0.0]),
                                      rng=act_rng)
            head = nn.CategoricalHead(out.logits)
            action = int(head.sample(act_rng)[0])
            lp = float(head.log_probs.data[0, action])
        reward = 1.0 if action == 0 else 0.0
        init = state_to_arrays(reset_state(cfg, batch=1, dtype=np.float64))
        return Trajectory(
            length=1,
            windows=np.repeat(obs[None], 2, axis=0).astype(np.uint8),
            scalars=np.repeat(scal, 2, axis=0),
            prev_actions=np.array([-1, action]),
            prev_rewards=np.array([0.0, reward], dtype=np.float32),
            actions=np.array([action]),
            rewards=np.array([reward], dtype=np.float32),
            behavior_log_probs=np.array([lp], dtype=np.float32),
            behavior_values=np.zeros(1, dtype=np.float32),
            dones=np.array([True]),
            mask=np.ones(1, dtype=np.float32),
            latent_noise=np.zeros((2, cfg.latent_dim)),
            init_state=init,
            policy_version=lrn.params.policy_version,
        )

    for step_idx in range(2000):
        batch = [play_one(step_idx * 8 + i) for i in range(8)]
        lrn.update(batch, np.random.default_rng(step_idx))
        # early exit once solved keeps the suite fast
        if step_idx % 50 == 0:
            st = reset_state(cfg, batch=1, dtype=np.float64)
            with nn.no_grad():
                u = agent_mod.encode_obs(params, agent_mod.obs_to_arrays(obs, scal, dtype=np.float64))
                out = agent_mod.step_core(params, st, u, np.array([-1]), np.array([0.0]),
                                          rng=np.random.default_rng(0))
            p0 = nn.softmax_data(out.logits.data)[0, 0]
            if p0 > 0.99:
                break
    assert p0 > 0.99, f"optimal-arm probability only reached {p0:.3f}"
