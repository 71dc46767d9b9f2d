import numpy as np
import pytest

from _planted import PlantedEnv, planted_run
from fecnn import ddpg, ecc, gradnet, nn, scheme
from fecnn.ddpg import Batch, ReplayBuffer, TrainConfig, Transition
from fecnn.gradnet import MLP, Adam


def synthetic_batch(rng, n=64, sdim=7, adim=4, terminal=True):
    return Batch(
        rng.random((n, sdim)),
        rng.integers(0, 2, (n, adim)).astype(float),
        rng.random((n, sdim)),
        rng.normal(size=n),
        np.full(n, terminal),
    )


def small_agent(sdim=7, adim=4, **kw):
    cfg = TrainConfig(hidden=(64, 48), **kw)
    return ddpg.Agent(sdim, adim, cfg, seed=3)


# ---------------------------------------------------------------- replay


def test_replay_evicts_oldest():
    buf = ReplayBuffer(3)
    items = [Transition(np.array([i]), np.array([0.0]), np.array([i]), float(i), False) for i in range(4)]
    for tr in items:
        buf.push(tr)
    assert len(buf) == 3
    assert items[0] not in buf.items and items[3] in buf.items


def test_replay_sample_shapes(rng):
    buf = ReplayBuffer(10)
    for i in range(5):
        buf.push(Transition(np.full(3, i), np.zeros(2), np.full(3, i + 1), float(i), i == 4))
    b = buf.sample(8, rng)
    assert b.states.shape == (8, 3) and b.actions.shape == (8, 2) and b.terminal.dtype == bool


# ---------------------------------------------------------------- actions and states


def test_round_action_examples():
    assert ddpg.round_action([0.9, 0.2, 0.7, 0.5], "bitmask", 4).tolist() == [1, 0, 1, 1]
    assert ddpg.round_action(7.6, "topbits", 8) == 8
    assert ddpg.round_action(9.3, "topbits", 8) == 8
    assert ddpg.round_action(-0.4, "topbits", 8) == 0
    assert ddpg.round_action(2.5, "topbits", 8) == 3


def test_act_noise_free_is_deterministic(rng):
    actor = MLP((5, 16, 8), "sigmoid", seed=1)
    s = rng.random(5)
    a = ddpg.act(actor, s, 0.0, "bitmask", 8)
    assert np.array_equal(a, ddpg.act(actor, s, 0.0, "bitmask", 8))
    assert np.array_equal(a, (actor(s[None])[0] >= 0.5).astype(np.uint8))


def test_act_topbits_scales_to_count():
    actor = MLP((2, 1), "sigmoid", seed=0)
    actor.weights[0][:] = 0.0
    actor.biases[0][:] = np.log(0.95 / 0.05)  # output 0.95 -> 7.6 of 8
    assert ddpg.act(actor, np.zeros(2), 0.0, "topbits", 8) == 8


def test_act_clamps_noisy_output():
    actor = MLP((2, 3), "sigmoid", seed=0)
    a, raw = ddpg.act(actor, np.zeros(2), 10.0, "bitmask", 3, np.random.default_rng(0), return_raw=True)
    assert raw.min() >= 0 and raw.max() <= 1 and set(a.tolist()) <= {0, 1}


def test_local_states(ref_model):
    metas = nn.layer_metadata(ref_model)
    prev = [np.zeros(32)] + [np.ones(32)] * 3
    states = ddpg.build_local_states(metas, prev, "bitmask", 32)
    assert states.shape == (4, 6 + 32)
    assert np.all(states[0, 6:] == 0) and np.all(states[1:, 6:] == 1)
    assert states[:, :6].max() == 1.0 and states.min() >= 0
    twin = ref_model.with_weights([np.zeros(n) for n in ref_model.layer_sizes])
    np.testing.assert_array_equal(states, ddpg.build_local_states(nn.layer_metadata(twin), prev, "bitmask", 32))


def test_encoder_topbits(ref_model):
    enc = ddpg.StateEncoder(nn.layer_metadata(ref_model), "topbits", 32)
    assert enc.action_dim == 1 and enc.initial_action().tolist() == [0.0]
    assert enc.encode_action(8).tolist() == [0.25]


# ---------------------------------------------------------------- updates


def test_untrained_critic_with_zero_head_is_zero(rng):
    critic = MLP((5, 8, 1), seed=0)
    critic.weights[-1][:] = 0
    critic.biases[-1][:] = 0
    assert ddpg.q_value(critic, rng.random(3), rng.random(2)) == 0.0


def test_critic_gamma_zero_converges(rng):
    ag = small_agent()
    batch = synthetic_batch(rng, terminal=False)
    losses = [ag.train_step(batch, 0.0, 0.3, train_actor=False)[1] for _ in range(2000)]
    assert min(losses) < 1e-4
    x = np.concatenate([batch.states, batch.actions], axis=1)
    np.testing.assert_allclose(ag.critic(x)[:, 0], batch.rewards - 0.3, atol=0.02)


def test_critic_loss_decreases(rng):
    ag = small_agent()
    batch = synthetic_batch(rng, terminal=False)
    losses = [ddpg.critic_update(ag.critic, ag.critic_opt, ag.target_actor, ag.target_critic, batch, 1.0, 0.0) for _ in range(200)]
    assert losses[-1] < 0.5 * losses[0]


def test_baseline_equal_to_reward_drives_q_to_zero(rng):
    ag = small_agent()
    batch = synthetic_batch(rng)
    batch.rewards[:] = 0.7
    for _ in range(500):
        ddpg.critic_update(ag.critic, ag.critic_opt, ag.target_actor, ag.target_critic, batch, 0.0, 0.7)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    assert np.abs(ag.critic(x)).max() < 1e-2


def test_terminal_rows_drop_bootstrap(rng):
    ag = small_agent()
    ag.target_critic.biases[-1][:] = 100.0  # any bootstrap would dominate
    batch = synthetic_batch(rng, terminal=True)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    q = ag.critic(x)[:, 0]
    loss = ddpg.critic_update(ag.critic, ag.critic_opt, ag.target_actor, ag.target_critic, batch, 1.0, 0.1)
    assert loss == pytest.approx(np.mean((q - (batch.rewards - 0.1)) ** 2))


def test_bootstrap_uses_target_nets(rng):
    ag = small_agent()
    batch = synthetic_batch(rng, terminal=False)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    q = ag.critic(x)[:, 0]
    na = ag.target_actor(batch.next_states)
    qn = ag.target_critic(np.concatenate([batch.next_states, na], axis=1))[:, 0]
    loss = ddpg.critic_update(ag.critic, ag.critic_opt, ag.target_actor, ag.target_critic, batch, 0.5, 0.2)
    assert loss == pytest.approx(np.mean((q - 0.5 * qn - (batch.rewards - 0.2)) ** 2))


def test_actor_update_leaves_critic_alone(rng):
    ag = small_agent()
    before = [p.copy() for p in ag.critic.params]
    ddpg.actor_update(ag.actor, ag.actor_opt, ag.critic, synthetic_batch(rng))
    assert all(np.array_equal(a, b) for a, b in zip(before, ag.critic.params))


def test_constant_critic_gives_zero_actor_gradient(rng):
    ag = small_agent()
    sdim = 7
    ag.critic.weights[0][sdim:, :] = 0.0  # critic ignores the action
    before = [p.copy() for p in ag.actor.params]
    ddpg.actor_update(ag.actor, ag.actor_opt, ag.critic, synthetic_batch(rng))
    assert all(np.array_equal(a, b) for a, b in zip(before, ag.actor.params))


def test_actor_saturates_toward_upper_bound(rng):
    sdim, adim = 7, 4
    ag = small_agent(sdim, adim, lr_actor=1e-3)
    critic = MLP((sdim + adim, 1), seed=0)
    critic.weights[0][:] = 0.0
    critic.weights[0][sdim:, 0] = 1.0  # Q = sum(action)
    critic.biases[0][:] = 0.0
    batch = synthetic_batch(rng, sdim=sdim, adim=adim)
    start = ag.actor(batch.states).mean()
    for _ in range(300):
        ddpg.actor_update(ag.actor, ag.actor_opt, critic, batch)
    out = ag.actor(batch.states)
    assert start == pytest.approx(0.5, abs=0.01)
    assert out.min() > 0.95


def test_logit_bound_keeps_outputs_inside(rng):
    sdim, adim = 7, 4
    ag = small_agent(sdim, adim, lr_actor=1e-3, logit_l2=1.0, logit_bound=2.0)
    critic = MLP((sdim + adim, 1), seed=0)
    critic.weights[0][:] = 0.0
    critic.weights[0][sdim:, 0] = 1e-3
    critic.biases[0][:] = 0.0
    batch = synthetic_batch(rng, sdim=sdim, adim=adim)
    for _ in range(500):
        ddpg.actor_update(ag.actor, ag.actor_opt, critic, batch, 1.0, 2.0)
    out = ag.actor(batch.states)
    assert 0.5 < out.max() < 1 / (1 + np.exp(-2.2))


def test_agent_init_action_bias():
    ag = small_agent(init_action=0.2)
    out = ag.actor(np.random.default_rng(0).random((5, 7)))
    np.testing.assert_allclose(out, 0.2, atol=0.01)
    assert ag.target_actor.sizes == ag.actor.sizes and ag.target_critic.sizes == ag.critic.sizes


def test_noise_schedule():
    cfg = TrainConfig(iterations=100)
    assert cfg.noise_scale(0) == 0.5
    assert cfg.noise_scale(25) == pytest.approx(0.275)
    assert cfg.noise_scale(50) == pytest.approx(0.05)
    assert cfg.noise_scale(99) == pytest.approx(0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="greedy")
    with pytest.raises(ValueError):
        TrainConfig(iterations=-1)


# ---------------------------------------------------------------- training loop


class TinyEnv(PlantedEnv):
    """Planted environment on a tiny model with short masks."""

    def __init__(self):
        conv = nn.conv_layer(1, 2, 2, 4, pool=2)
        fc = nn.fc_layer(2, 3, activation="none")
        super().__init__(nn.NetworkModel([conv, fc], 3, (4, 4, 1)), m=8)


def quick_cfg(**kw):
    return TrainConfig(**{"iterations": 30, "hidden": (32, 24), "batch_size": 8, "select_trials": 2, **kw})


def test_zero_budget_falls_back_to_baseline():
    env = TinyEnv()
    res = ddpg.run_optimization(env, quick_cfg(iterations=0, target_r=0.03))
    assert res.fallback and res.log == []
    want = scheme.baseline_for_target(0.03, env.layer_sizes, 8, env.ecc, env.p)
    assert np.array_equal(res.plan.masks, want.masks)


def test_transitions_per_iteration():
    env = TinyEnv()
    res = ddpg.run_optimization(env, quick_cfg(target_r=1.0), reward_fn=env.reward)
    items = list(res.buffer.items)
    assert len(items) == 30 * 2
    for k in range(30):
        pair = items[2 * k : 2 * k + 2]
        assert pair[0].reward == pair[1].reward == res.log[k][3]
        assert [tr.terminal for tr in pair] == [False, True]
        np.testing.assert_array_equal(pair[0].next_state, pair[1].state)
    assert [row[0] for row in res.log] == list(range(30))


def test_topbits_plans_respect_target():
    env = TinyEnv()
    seen = []
    target = 0.02
    res = ddpg.run_optimization(env, quick_cfg(mode="topbits", target_r=target), reward_fn=env.reward, on_iteration=lambda it, ag, mk: seen.append(mk.copy()))
    assert len(seen) == 30
    for mk in seen + [res.plan.masks]:
        assert ecc.redundancy(list(mk), env.layer_sizes, 8, env.ecc, env.p).r <= target
        counts = mk.sum(axis=1)
        assert np.array_equal(mk, scheme.topbits_masks(counts, 8))


def test_training_is_deterministic():
    env = TinyEnv()
    a = ddpg.run_optimization(env, quick_cfg(target_r=1.0, seed=4), reward_fn=env.reward)
    b = ddpg.run_optimization(env, quick_cfg(target_r=1.0, seed=4), reward_fn=env.reward)
    c = ddpg.run_optimization(env, quick_cfg(target_r=1.0, seed=5), reward_fn=env.reward)
    assert np.array_equal(np.array(a.log), np.array(b.log), equal_nan=True)
    assert not np.array_equal(np.array(a.log), np.array(c.log), equal_nan=True)
    assert np.array_equal(a.plan.masks, b.plan.masks)


def test_targets_track_online_nets():
    env = TinyEnv()
    res = ddpg.run_optimization(env, quick_cfg(target_r=1.0), reward_fn=env.reward)
    ag = res.agent
    for online, target in ((ag.actor, ag.target_actor), (ag.critic, ag.target_critic)):
        assert online.sizes == target.sizes
        assert not all(np.array_equal(a, b) for a, b in zip(online.params, target.params))


def test_checkpoint_of_trained_agent(tmp_path):
    env = TinyEnv()
    res = ddpg.run_optimization(env, quick_cfg(target_r=1.0), reward_fn=env.reward)
    gradnet.save_checkpoint(tmp_path / "a.npz", res.agent.nets())
    back = gradnet.load_checkpoint(tmp_path / "a.npz")
    x = np.random.default_rng(0).random((3, res.agent.actor.sizes[0]))
    np.testing.assert_array_equal(back["actor"](x), res.agent.actor(x))


def test_infeasible_target_falls_back(rng):
    env = TinyEnv()
    res = ddpg.run_optimization(env, quick_cfg(target_r=0.0, init_action=0.9, noise_start=0.0, noise_end=0.0), reward_fn=env.reward)
    assert res.fallback
    assert not res.plan.masks.any()


def test_config_dict_round_trip():
    cfg = TrainConfig(hidden=(10, 5), seed=3)
    assert TrainConfig(**ddpg.config_to_dict(cfg)) == cfg


@pytest.mark.slow
def test_planted_oracle_recovery():
    wins = 0
    for seed in range(3):
        env, res = planted_run(seed)
        wins += bool(np.array_equal(res.plan.masks, env.target))
    assert wins >= 2
