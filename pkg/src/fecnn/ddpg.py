"""Layer-sequential DDPG search over per-layer protection masks.

One iteration walks the edge layers in order. The actor maps each layer's
local state (normalised geometry plus the previous layer's action) to an
action; the resulting plan is scored once under channel noise, and the
shared reward is stored with every layer's transition. After each iteration
the critic, actor and both target nets are updated from replay minibatches.
"""

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ecc as ecc_mod
from . import kernels
from .channel import ChannelSpec
from .gradnet import MLP, Adam, soft_update
from .nn import layer_metadata
from .scheme import (
    ProtectionPlan,
    RewardParams,
    baseline_for_target,
    reward_bitmask,
    reward_topbits,
    topbits_adjust,
    topbits_masks,
)

log = logging.getLogger(__name__)

MODES = ("bitmask", "topbits")
LOG_COLUMNS = ("iteration", "r", "P", "R", "loss_actor", "loss_critic")

_TRAIN_STREAM = 0x7EA1
_SELECT_STREAM = 0x5E1E
_AGENT_STREAM = 0xA6E7


@dataclass
class TrainConfig:
    mode: str = "bitmask"
    target_r: float = 0.02
    iterations: int = 300
    seed: int = 0
    gamma: float = 1.0
    delta: float = 0.01
    batch_size: int = 64
    buffer_capacity: int = 2000
    updates_per_iter: int = 4
    warmup: int = 0
    init_action: float = 0.5
    store_continuous: bool = False
    logit_l2: float = 0.0
    logit_bound: float = 0.0
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    hidden: tuple = (400, 300)
    noise_start: float = 0.5
    noise_end: float = 0.05
    beta_plus: float = 1.0
    beta_minus: float = 0.05
    baseline_decay: float = 0.95
    top_k: int = 5
    select_trials: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 0 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("iterations, batch size and buffer capacity must be non-negative/positive")
        if self.target_r < 0:
            raise ValueError("target redundancy must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def reward_params(self):
        return RewardParams(self.beta_plus, self.beta_minus, self.gamma, self.baseline_decay)

    def noise_scale(self, iteration):
        """Linear anneal from noise_start to noise_end over the first half of the budget."""
        half = max(1, self.iterations // 2)
        frac = min(1.0, iteration / half)
        return self.noise_start + (self.noise_end - self.noise_start) * frac


# ------------------------------------------------------------------ states & actions


class StateEncoder:
    """Local state vectors: geometry scaled by per-feature model maxima, then a_{i-1}."""

    def __init__(self, metas, mode, m):
        self.mode = mode
        self.m = m
        geo = np.array([meta.as_tuple() for meta in metas], dtype=np.float64)
        scale = geo.max(axis=0)
        scale[scale == 0] = 1.0
        self.scale = scale
        self.geometry = geo / scale

    @property
    def action_dim(self):
        return self.m if self.mode == "bitmask" else 1

    @property
    def state_dim(self):
        return self.geometry.shape[1] + self.action_dim

    def initial_action(self):
        return np.zeros(self.action_dim)

    def state(self, i, prev_action_enc):
        return np.concatenate([self.geometry[i], prev_action_enc])

    def encode_action(self, action):
        if self.mode == "bitmask":
            return np.asarray(action, dtype=np.float64)
        return np.array([action / self.m])


def build_local_states(metas, prev_actions, mode, m):
    """States for every layer given the encoded previous actions a_0..a_{N-1}."""
    enc = StateEncoder(metas, mode, m)
    return np.stack([enc.state(i, np.asarray(prev_actions[i], dtype=np.float64)) for i in range(len(metas))])


def round_action(raw, mode, m):
    """Clamp a raw action (mask in [0,1]^m, or a count in [0,m]) and round half up."""
    if mode == "bitmask":
        return np.floor(np.clip(np.asarray(raw, dtype=np.float64), 0.0, 1.0) + 0.5).astype(np.uint8)
    return int(math.floor(min(max(float(np.ravel(raw)[0]), 0.0), float(m)) + 0.5))


def act(actor, state, noise_scale, mode, m, rng=None, return_raw=False):
    """Actor output plus Gaussian exploration noise, clamped and rounded.

    With ``return_raw`` the clamped pre-rounding output in [0, 1] is returned
    as well.
    """
    out = actor(np.asarray(state)[None])[0]
    if noise_scale > 0:
        out = out + noise_scale * rng.standard_normal(out.shape)
    out = np.clip(out, 0.0, 1.0)
    a = round_action(out, mode, m) if mode == "bitmask" else round_action(out * m, mode, m)
    return (a, out) if return_raw else a


# ------------------------------------------------------------------ replay


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    terminal: bool


class ReplayBuffer:
    def __init__(self, capacity):
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def push(self, tr):
        self.items.append(tr)

    def sample(self, n, rng):
        idx = rng.integers(0, len(self.items), size=n)
        batch = [self.items[i] for i in idx]
        return Batch(
            np.stack([b.state for b in batch]),
            np.stack([b.action for b in batch]),
            np.stack([b.next_state for b in batch]),
            np.array([b.reward for b in batch]),
            np.array([b.terminal for b in batch], dtype=bool),
        )


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray


# ------------------------------------------------------------------ updates


def q_value(critic, state, action):
    x = np.concatenate([np.atleast_2d(state), np.atleast_2d(action)], axis=1)
    q = critic(x)[:, 0]
    return float(q[0]) if q.size == 1 else q


def critic_update(critic, critic_opt, target_actor, target_critic, batch, gamma, baseline):
    """One step on mean (Q(s,a) - gamma*Q'(s', mu'(s')) - (R - B))^2; terminal rows drop the bootstrap."""
    y = batch.rewards - baseline
    if gamma != 0.0:
        na = target_actor(batch.next_states)
        qn = target_critic(np.concatenate([batch.next_states, na], axis=1))[:, 0]
        y = y + gamma * np.where(batch.terminal, 0.0, qn)
    q, acts = critic.forward(np.concatenate([batch.states, batch.actions], axis=1), cache=True)
    diff = q[:, 0] - y
    loss = float(np.mean(diff**2))
    gw, gb, _ = critic.backward((2.0 / len(diff)) * diff[:, None], acts)
    critic_opt.step(critic, gw, gb)
    return loss


def actor_update(actor, actor_opt, critic, batch, logit_l2=0.0, logit_bound=0.0):
    """One ascent step on mean Q(s, mu(s)); the critic is read but never modified.

    ``logit_l2`` adds ``logit_l2 * mean(sum e^2)`` where e is the part of each
    output pre-activation beyond ``+-logit_bound``. This keeps a sigmoid
    output out of its flat tails so later critic corrections still move it.
    """
    a, a_acts = actor.forward(batch.states, cache=True)
    q, c_acts = critic.forward(np.concatenate([batch.states, a], axis=1), cache=True)
    n = len(batch.states)
    _, _, gin = critic.backward(np.full((n, 1), -1.0 / n), c_acts)
    ga = gin[:, batch.states.shape[1] :]
    loss = float(-np.mean(q))
    pre = None
    if logit_l2 > 0:
        z = actor.logits(a_acts)
        excess = np.sign(z) * np.maximum(np.abs(z) - logit_bound, 0.0)
        pre = (2.0 * logit_l2 / n) * excess
        loss += logit_l2 * float(np.mean(np.sum(excess * excess, axis=1)))
    gw, gb, _ = actor.backward(ga, a_acts, grad_pre=pre)
    actor_opt.step(actor, gw, gb)
    return loss


class Agent:
    """Actor, critic, their targets, and the two optimisers."""

    def __init__(self, state_dim, action_dim, cfg, seed):
        s_actor = kernels.derive_seed(seed, _AGENT_STREAM, 1)
        s_critic = kernels.derive_seed(seed, _AGENT_STREAM, 2)
        self.actor = MLP((state_dim, *cfg.hidden, action_dim), "sigmoid", seed=s_actor, final_scale=1e-3)
        # start every action output near init_action
        q = min(max(cfg.init_action, 1e-3), 1 - 1e-3)
        self.actor.biases[-1] += math.log(q / (1 - q))
        self.critic = MLP((state_dim + action_dim, *cfg.hidden, 1), "identity", seed=s_critic)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, cfg.lr_actor)
        self.critic_opt = Adam(self.critic, cfg.lr_critic)
        self.delta = cfg.delta
        self.logit_l2 = cfg.logit_l2
        self.logit_bound = cfg.logit_bound

    def train_step(self, batch, gamma, baseline, train_actor=True):
        lc = critic_update(self.critic, self.critic_opt, self.target_actor, self.target_critic, batch, gamma, baseline)
        la = actor_update(self.actor, self.actor_opt, self.critic, batch, self.logit_l2, self.logit_bound) if train_actor else float("nan")
        soft_update(self.target_actor, self.actor, self.delta)
        soft_update(self.target_critic, self.critic, self.delta)
        return la, lc

    def nets(self):
        return {
            "actor": self.actor,
            "critic": self.critic,
            "target_actor": self.target_actor,
            "target_critic": self.target_critic,
        }


# ------------------------------------------------------------------ environments


class NetworkEnv:
    """Scores masks on a real model: one noisy trial per training iteration,
    ``select_trials`` trials on an independent seed stream for final selection."""

    def __init__(self, plan_evaluator, ecc, p, seed=0, select_trials=100):
        self.pe = plan_evaluator
        self.ecc = ecc
        self.p = p
        self.seed = seed
        self.select_trials = select_trials
        self.metas = layer_metadata(plan_evaluator.model)

    @property
    def layer_sizes(self):
        return self.pe.layer_sizes

    @property
    def m(self):
        return self.pe.m

    @property
    def perf0(self):
        return self.pe.perf0

    def performance(self, masks, iteration):
        chan = ChannelSpec(self.p, seed=kernels.derive_seed(self.seed, _TRAIN_STREAM)).for_trial(iteration)
        return self.pe.trial(masks, self.ecc, chan)

    def final_score(self, masks):
        chan = ChannelSpec(self.p, seed=kernels.derive_seed(self.seed, _SELECT_STREAM))
        return self.pe.evaluate(ProtectionPlan(masks, self.ecc), chan, self.select_trials).mean


# ------------------------------------------------------------------ training loop


@dataclass
class TrainResult:
    plan: ProtectionPlan
    log: list = field(default_factory=list)
    agent: Agent | None = None
    selection: list = field(default_factory=list)  # (score, train_reward, masks)
    fallback: bool = False
    buffer: ReplayBuffer | None = None


def run_optimization(env, cfg, reward_fn=None, on_iteration=None):
    """Search for a protection plan; returns a :class:`TrainResult`.

    ``env`` supplies ``metas``, ``layer_sizes``, ``m``, ``ecc``, ``p``,
    ``perf0``, ``performance(masks, iteration)`` and ``final_score(masks)``.
    ``reward_fn(masks, r, iteration) -> (P, R)`` replaces the standard
    reward when given. ``on_iteration(iteration, agent, masks)`` is called
    after every iteration's updates.
    """
    m, sizes, n_layers = env.m, env.layer_sizes, len(env.layer_sizes)
    params = cfg.reward_params
    # validates the ideal-code channel before any compute
    ecc_mod.redundancy([np.zeros(m)] * n_layers, sizes, m, env.ecc, env.p)

    def fallback():
        plan = baseline_for_target(cfg.target_r, sizes, m, env.ecc, env.p)
        return TrainResult(plan, [], None, [], True)

    if cfg.iterations == 0:
        return fallback()

    enc = StateEncoder(env.metas, cfg.mode, m)
    agent = Agent(enc.state_dim, enc.action_dim, cfg, cfg.seed)
    rng = np.random.default_rng(kernels.derive_seed(cfg.seed, _AGENT_STREAM, 3))
    buf = ReplayBuffer(cfg.buffer_capacity)
    baseline = None
    rows = []
    seen = {}

    for it in range(cfg.iterations):
        sigma = cfg.noise_scale(it)
        prev = enc.initial_action()
        states, acts_enc, actions = [], [], []
        for i in range(n_layers):
            s = enc.state(i, prev)
            a, raw = act(agent.actor, s, sigma, cfg.mode, m, rng, return_raw=True)
            states.append(s)
            actions.append(a)
            prev = enc.encode_action(a)
            acts_enc.append(raw if cfg.store_continuous else prev)
        if cfg.mode == "topbits":
            counts = topbits_adjust(actions, sizes, m, env.ecc, env.p, cfg.target_r)
            masks = topbits_masks(counts, m)
        else:
            masks = np.stack(actions).astype(np.uint8)
        r = ecc_mod.redundancy(list(masks), sizes, m, env.ecc, env.p).r

        if reward_fn is not None:
            perf, reward = reward_fn(masks, r, it)
        else:
            perf = env.performance(masks, it)
            if cfg.mode == "topbits":
                reward = reward_topbits(perf, env.perf0)
            else:
                reward = reward_bitmask(perf, env.perf0, r, cfg.target_r, params)

        for i in range(n_layers):
            last = i == n_layers - 1
            nxt = states[i] if last else states[i + 1]
            buf.push(Transition(states[i], acts_enc[i], nxt, reward, last))
        baseline = reward if baseline is None else params.baseline_decay * baseline + (1 - params.baseline_decay) * reward

        la = lc = float("nan")
        if len(buf) >= cfg.batch_size:
            for _ in range(cfg.updates_per_iter):
                la, lc = agent.train_step(buf.sample(cfg.batch_size, rng), params.gamma, baseline, train_actor=it >= cfg.warmup)
        rows.append((it, r, perf, reward, la, lc))
        if on_iteration is not None:
            on_iteration(it, agent, masks)

        if r <= cfg.target_r:
            key = masks.tobytes()
            tot, cnt, _ = seen.get(key, (0.0, 0, masks))
            seen[key] = (tot + reward, cnt + 1, masks)

    # greedy policy plan competes alongside the best sampled plans
    prev = enc.initial_action()
    greedy = []
    for i in range(n_layers):
        a = act(agent.actor, enc.state(i, prev), 0.0, cfg.mode, m)
        greedy.append(a)
        prev = enc.encode_action(a)
    if cfg.mode == "topbits":
        gmasks = topbits_masks(topbits_adjust(greedy, sizes, m, env.ecc, env.p, cfg.target_r), m)
    else:
        gmasks = np.stack(greedy).astype(np.uint8)

    ranked = sorted(seen.values(), key=lambda v: (-v[0] / v[1], v[2].tobytes()))[: cfg.top_k]
    candidates = [(tot / cnt, masks) for tot, cnt, masks in ranked]
    g_r = ecc_mod.redundancy(list(gmasks), sizes, m, env.ecc, env.p).r
    if g_r <= cfg.target_r and gmasks.tobytes() not in {c[1].tobytes() for c in candidates}:
        candidates.append((float("nan"), gmasks))
    if not candidates:
        res = fallback()
        res.log, res.agent, res.buffer = rows, agent, buf
        return res

    scored = [(env.final_score(masks), train_r, masks) for train_r, masks in candidates]
    best = max(scored, key=lambda v: v[0])
    plan = ProtectionPlan(best[2], env.ecc, cfg.target_r)
    log.info("selected plan score %.4f (bits per layer %s)", best[0], plan.bit_counts())
    return TrainResult(plan, rows, agent, scored, False, buf)


def config_to_dict(cfg):
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
