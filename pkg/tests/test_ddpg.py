import math

import numpy as np
import pytest
from scipy.stats import chi2

from hedgelab.ddpg import (
    DdpgAgent,
    DdpgConfig,
    OuNoise,
    ReplayBuffer,
    actor_gradient,
    actor_update,
    critic_update,
    select_action,
    train,
)
from hedgelab.env import EnvConfig, rollout
from hedgelab.market import MarketParams, TradingGrid
from hedgelab.nn import AdamState, DenseNet
from hedgelab.pricing import OptionSpec

from oracles import finite_diff_param_grads


def zero_net(sizes):
    net = DenseNet.build(sizes, np.random.default_rng(0))
    for p in net.params():
        p[...] = 0.0
    return net


def small_env(**kw):
    days = kw.pop("days", 30)
    market = MarketParams(mu=kw.pop("mu", 0.05), sigma=kw.pop("sigma", 0.2),
                          rate=0.0, s0=100.0)
    option = OptionSpec(strike=kw.pop("strike", 100.0), maturity=days / 365)
    return EnvConfig(market=market, option=option, grid=TradingGrid.daily(days), **kw)


def test_select_action_zero_actor_is_midpoint():
    actor = zero_net([5, 12, 1])
    a = select_action(actor, np.zeros(5), bounds=(-20.0, 120.0))
    assert a == pytest.approx(50.0)


def test_select_action_deterministic_without_noise():
    actor = DenseNet.build([5, 8, 1], np.random.default_rng(1))
    f = np.random.default_rng(2).normal(size=5)
    a1 = select_action(actor, f, bounds=(-20.0, 120.0))
    a2 = select_action(actor, f, bounds=(-20.0, 120.0))
    assert a1 == a2
    assert -20.0 <= a1 <= 120.0


def test_select_action_rejects_non_finite():
    actor = zero_net([3, 1])
    with pytest.raises(ValueError):
        select_action(actor, np.array([1.0, np.nan, 0.0]), bounds=(0.0, 1.0))


def test_ou_noise_stationary_law():
    noise = OuNoise(theta=0.15, sigma=0.2, dt=1.0, rng=np.random.default_rng(3))
    n = 100_000
    xs = np.array([noise.sample() for _ in range(n)])
    want = 0.2 / math.sqrt(2 * 0.15)
    # AR(1) autocorrelation shrinks the effective sample size
    phi = math.exp(-0.15)
    n_eff = n * (1 - phi) / (1 + phi)
    se_std = want * math.sqrt(0.5 / n_eff)
    assert abs(xs.std() - want) < 3 * se_std
    assert abs(xs.mean()) < 3 * want / math.sqrt(n_eff)


def test_ou_reset():
    noise = OuNoise(0.15, 0.2, 1.0, np.random.default_rng(4))
    noise.sample()
    noise.reset()
    assert noise.x == 0.0


def test_replay_buffer_fifo_and_size():
    buf = ReplayBuffer(capacity=4, state_dim=2)
    for i in range(6):
        buf.push(np.full(2, i), i, i, np.full(2, i + 1), False)
    assert buf.size == 4
    # oldest two entries were evicted
    assert set(buf.rewards.tolist()) == {2.0, 3.0, 4.0, 5.0}


def test_replay_sampling_uniform_chi_square():
    k = 200
    buf = ReplayBuffer(capacity=k, state_dim=1)
    for i in range(k):
        buf.push([0.0], 0.0, float(i), [0.0], False)
    rng = np.random.default_rng(5)
    draws = 100_000
    _, _, r, _, _ = buf.sample(draws, rng)
    counts = np.bincount(r.astype(int), minlength=k)
    expected = draws / k
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < chi2.ppf(0.999, k - 1)


def test_critic_update_zero_loss_at_fixpoint():
    # critic == 0 everywhere, rewards 0, terminal: targets are exactly met
    critic = zero_net([3, 4, 1])
    target_c = zero_net([3, 4, 1])
    target_a = zero_net([2, 1])
    s = np.random.default_rng(6).normal(size=(8, 2))
    batch = (s, np.zeros(8), np.zeros(8), s, np.ones(8))
    adam = AdamState(critic.params(), lr=1e-3)
    loss = critic_update(critic, target_c, target_a, batch, gamma=0.9, adam=adam)
    assert loss == 0.0


def test_critic_update_terminal_targets_are_rewards():
    # one transition, scalar critic: loss = (q - r)^2 with done=1
    critic = zero_net([2, 1])
    critic.layers[0].b[...] = 0.7  # q == 0.7 for all inputs
    target_c = critic.clone()
    target_a = zero_net([1, 1])
    batch = (np.zeros((1, 1)), np.zeros(1), np.array([0.3]), np.zeros((1, 1)), np.ones(1))
    adam = AdamState(critic.params(), lr=0.0)
    loss = critic_update(critic, target_c, target_a, batch, gamma=0.99, adam=adam)
    assert loss == pytest.approx((0.7 - 0.3) ** 2, rel=1e-12)


def test_critic_update_scalar_bellman_hand_oracle():
    # q=0.7 everywhere, q'=0.7, r=0.2, gamma=0.5 -> target 0.55, loss 0.0225
    critic = zero_net([2, 1])
    critic.layers[0].b[...] = 0.7
    target_c = critic.clone()
    target_a = zero_net([1, 1])
    batch = (np.zeros((1, 1)), np.zeros(1), np.array([0.2]), np.zeros((1, 1)), np.zeros(1))
    adam = AdamState(critic.params(), lr=0.0)
    loss = critic_update(critic, target_c, target_a, batch, gamma=0.5, adam=adam)
    assert loss == pytest.approx((0.7 - (0.2 + 0.5 * 0.7)) ** 2, rel=1e-12)


def test_actor_update_zero_gradient_when_critic_ignores_action():
    critic = zero_net([3, 1])
    critic.layers[0].w[0, 0] = 1.0
    critic.layers[0].w[1, 0] = 2.0  # state columns only; action column stays 0
    actor = DenseNet.build([2, 4, 1], np.random.default_rng(7))
    before = [p.copy() for p in actor.params()]
    adam = AdamState(actor.params(), lr=1e-2)
    batch = (np.random.default_rng(8).normal(size=(6, 2)),)
    actor_update(actor, critic, batch, adam)
    for b, p in zip(before, actor.params()):
        np.testing.assert_array_equal(b, p)


def test_actor_update_moves_toward_maximum():
    # Q(s, a) = -(a - 0.4)^2 has its peak at a* = 0.4
    class QuadCritic(DenseNet):
        pass

    # implement via an exact quadratic using the dense machinery is overkill;
    # check the sign of the gradient instead through a linear critic in a.
    critic = zero_net([2, 1])
    critic.layers[0].w[1, 0] = 1.0  # Q = a, ascending in the action
    actor = zero_net([1, 1])
    adam = AdamState(actor.params(), lr=1e-2)
    s = np.zeros((4, 1))
    before = select_action(actor, np.zeros(1), bounds=(-1.0, 1.0))
    actor_update(actor, critic, (s,), adam)
    after = select_action(actor, np.zeros(1), bounds=(-1.0, 1.0))
    assert after > before  # moves the action up toward higher Q


def test_actor_gradient_matches_finite_difference():
    rng = np.random.default_rng(9)
    actor = DenseNet.build([2, 3, 1], rng)
    critic = DenseNet.build([3, 4, 1], rng)
    s = rng.normal(size=(5, 2))

    def objective():
        u, _ = actor.forward(s, mode="eval")
        a = np.tanh(u[:, 0])
        q, _ = critic.forward(np.column_stack([s, a]), mode="eval")
        return float(np.mean(q[:, 0]))

    _, grads = actor_gradient(actor, critic, s)
    fd = finite_diff_param_grads(objective, actor.params(), h=1e-6)
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-5, atol=1e-10)


def test_update_isolation():
    # actor_update leaves critic bits unchanged and vice versa
    rng = np.random.default_rng(10)
    actor = DenseNet.build([2, 3, 1], rng)
    critic = DenseNet.build([3, 4, 1], rng)
    actor_t = actor.clone()
    critic_t = critic.clone()
    s = rng.normal(size=(6, 2))
    batch = (s, rng.normal(size=6), rng.normal(size=6), s, np.zeros(6))
    critic_bits = [p.copy() for p in critic.params()]
    actor_update(actor, critic, batch, AdamState(actor.params(), lr=1e-3))
    for b, p in zip(critic_bits, critic.params()):
        np.testing.assert_array_equal(b, p)
    actor_bits = [p.copy() for p in actor.params()]
    critic_update(critic, critic_t, actor_t, batch, 0.9, AdamState(critic.params(), lr=1e-3))
    for b, p in zip(actor_bits, actor.params()):
        np.testing.assert_array_equal(b, p)


def test_train_seed_determinism_and_bounds():
    env_cfg = small_env(days=5)
    cfg = DdpgConfig(episodes=30, warmup=20, minibatch=8, buffer_capacity=500)
    agent1, curve1 = train(cfg, env_cfg, seed=11)
    agent2, curve2 = train(cfg, env_cfg, seed=11)
    np.testing.assert_array_equal(curve1, curve2)
    for p, q in zip(agent1.actor.params(), agent2.actor.params()):
        np.testing.assert_array_equal(p, q)
    # emitted holdings always within bounds
    rec = rollout(env_cfg, agent1.policy(), seed=12, episode=0)
    lo, hi = env_cfg.holding_bounds
    assert np.all(rec.actions >= lo) and np.all(rec.actions <= hi)


def test_train_one_step_degenerate_env_closed_form():
    # sigma=0, alpha=0, single step: cost is deterministic in the action and
    # minimized where pnl = 1/lambda, i.e. h* = 1 + 1/(lambda * dS)
    env_cfg = small_env(days=1, sigma=0.0, strike=90.0, alpha=0.0, beta=0.0,
                        lambda_ra=1000.0, contract_multiplier=1.0)
    ds = 100.0 * (math.exp(0.05 / 365) - 1.0)
    h_star = 1.0 + 1.0 / (1000.0 * ds)
    assert 1.0 < h_star < 1.2
    cfg = DdpgConfig(episodes=1500, warmup=32, minibatch=32, buffer_capacity=5000,
                     actor_lr=1e-3, critic_lr=1e-2, ou_sigma=0.4, reward_scale=50.0)
    agent, _ = train(cfg, env_cfg, seed=13)
    rec = rollout(env_cfg, agent.policy(), seed=14, episode=0)
    assert rec.actions[0] == pytest.approx(h_star, abs=0.05)


def test_checkpoint_roundtrip(tmp_path):
    env_cfg = small_env(days=3)
    cfg = DdpgConfig(episodes=5, warmup=10, minibatch=4, buffer_capacity=100)
    agent, _ = train(cfg, env_cfg, seed=15)
    prefix = str(tmp_path / "agent")
    agent.save(prefix)
    loaded = DdpgAgent.load(prefix, cfg, env_cfg)
    rec_a = rollout(env_cfg, agent.policy(), seed=16, episode=0)
    rec_b = rollout(env_cfg, loaded.policy(), seed=16, episode=0)
    np.testing.assert_array_equal(rec_a.actions, rec_b.actions)


def test_config_validation():
    with pytest.raises(ValueError):
        DdpgConfig(actor_lr=0.0)
    with pytest.raises(ValueError):
        DdpgConfig(smoothing=1.5)
    with pytest.raises(ValueError):
        DdpgConfig(buffer_capacity=10, minibatch=64)
