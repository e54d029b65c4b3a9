"""Diffusion-policy contract designer with double critics.

The policy denoises Gaussian noise into a raw action conditioned on the
encoded market state. Both the policy and the critics are trained in the
usual off-policy actor-critic fashion from a replay buffer, with Polyak
averaged target copies of every network.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .contract import TRAINING_PENALTY, PenaltyPolicy, is_feasible
from .env import (
    ConfigError,
    EnvConfig,
    MarketEnv,
    decode_action,
    encode_state,
    encode_states,
    sample_state,
)
from .tensorlite import Adam, DenseNet, NumericError, add_grads, soft_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise levels ``delta_t`` for ``t = 1..T`` (index ``t - 1``)."""

    noise_levels: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.noise_levels, dtype=float).reshape(-1)
        if d.size < 1:
            raise ConfigError("a schedule needs at least one step")
        if np.any(d <= 0) or np.any(d >= 1):
            raise ConfigError(f"noise levels must lie in (0, 1), got {d}")
        object.__setattr__(self, "noise_levels", d)

    @property
    def T(self) -> int:
        return self.noise_levels.size

    @property
    def chi(self) -> np.ndarray:
        return 1.0 - self.noise_levels

    @property
    def chi_bar(self) -> np.ndarray:
        return np.cumprod(self.chi)

    def step_coefficients(self, t: int):
        """``(1/sqrt(chi_t), delta_t/sqrt(chi_t (1 - chi_bar_t)), sqrt(delta_t))``."""
        d = self.noise_levels[t - 1]
        chi = 1.0 - d
        chi_bar = self.chi_bar[t - 1]
        return 1.0 / np.sqrt(chi), d / np.sqrt(chi * (1.0 - chi_bar)), np.sqrt(d)


def build_schedule(T: int, beta_lo: float, beta_hi: float) -> DiffusionSchedule:
    """Noise levels spaced linearly from ``beta_lo`` to ``beta_hi``."""
    if T < 1:
        raise ConfigError(f"step count must be >= 1, got {T}")
    if not (0 < beta_lo <= beta_hi < 1):
        raise ConfigError(f"need 0 < beta_lo <= beta_hi < 1, got ({beta_lo}, {beta_hi})")
    if T == 1:
        return DiffusionSchedule(np.array([beta_lo]))
    return DiffusionSchedule(np.linspace(beta_lo, beta_hi, T))


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the integer step ``t``."""
    if dim == 0:
        return np.zeros(0)
    half = dim // 2
    freqs = np.exp(-np.log(100.0) * np.arange(half) / max(half, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2:
        emb = np.concatenate([emb, [t / 10.0]])
    return emb


@dataclass
class TrainConfig:
    episodes: int = 50
    steps_per_episode: int = 100
    batch_size: int = 512
    buffer_capacity: int = 1_000_000
    actor_lr: float = 1e-6
    critic_lr: float = 1e-6
    soft_update: float = 0.005
    exploration_noise: float = 0.01
    discount: float = 0.0
    bootstrap: str = "next_state"
    penalty_policy: PenaltyPolicy | None = TRAINING_PENALTY
    diffusion_steps: int = 5
    beta_lo: float = 1e-4
    beta_hi: float = 0.02
    hidden: tuple = (256, 256)
    time_dim: int = 8
    reward_scale: float = 0.002
    presquash_reg: float = 1e-2
    warmup: int = 0
    eval_every: int = 5
    eval_states: int = 200
    eval_seed: int = 12345
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        for name in ("episodes", "steps_per_episode", "batch_size", "buffer_capacity",
                     "diffusion_steps", "eval_every", "eval_states"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size cannot exceed buffer_capacity")
        for name in ("actor_lr", "critic_lr", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.soft_update <= 1:
            raise ConfigError("soft_update must lie in (0, 1]")
        if not 0 <= self.discount <= 1:
            raise ConfigError("discount must lie in [0, 1]")
        if self.exploration_noise < 0:
            raise ConfigError("exploration_noise must be non-negative")
        if self.bootstrap not in ("next_state", "same_state"):
            raise ConfigError(f"unknown bootstrap mode {self.bootstrap!r}")
        build_schedule(self.diffusion_steps, self.beta_lo, self.beta_hi)


class ReplayBuffer:
    """Ring buffer of ``(state, action, reward, next_state)`` records.

    Storage grows by doubling up to ``capacity``; once full, the oldest
    record is overwritten.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.size = 0
        self._next = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, n):
        old = getattr(self, "states", None)
        states = np.zeros((n, self.state_dim))
        actions = np.zeros((n, self.action_dim))
        rewards = np.zeros(n)
        next_states = np.zeros((n, self.state_dim))
        if old is not None:
            k = self.size
            states[:k] = self.states[:k]
            actions[:k] = self.actions[:k]
            rewards[:k] = self.rewards[:k]
            next_states[:k] = self.next_states[:k]
        self.states, self.actions = states, actions
        self.rewards, self.next_states = rewards, next_states

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state):
        i = self._next
        if i >= self.states.shape[0]:
            self._alloc(min(self.capacity, 2 * self.states.shape[0]))
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        if n > self.size:
            raise ValueError(f"cannot sample {n} records from a buffer of {self.size}")
        idx = rng.choice(self.size, size=n, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx])


class GdmAgent:
    """Denoising policy, two critics and target copies of all three."""

    def __init__(self, state_dim: int, action_dim: int, schedule: DiffusionSchedule,
                 hidden=(256, 256), time_dim=8, exploration_noise=0.01, discount=0.0,
                 reward_scale=1.0, presquash_reg=0.0, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.presquash_reg = presquash_reg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.schedule = schedule
        self.time_dim = time_dim
        self.exploration_noise = exploration_noise
        self.discount = discount
        self.reward_scale = reward_scale
        self.hidden = tuple(hidden)
        gen_in = action_dim + state_dim + time_dim
        self.generator = DenseNet([gen_in, *hidden, action_dim], "silu", "identity", rng)
        self.critic1 = DenseNet([state_dim + action_dim, *hidden, 1], "silu", "identity", rng)
        self.critic2 = DenseNet([state_dim + action_dim, *hidden, 1], "silu", "identity", rng)
        self.target_generator = self.generator.copy()
        self.target_critic1 = self.critic1.copy()
        self.target_critic2 = self.critic2.copy()
        self._embeddings = np.stack(
            [time_embedding(t, time_dim) for t in range(1, schedule.T + 1)]
        )

    def networks(self):
        return {
            "generator": self.generator,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "target_generator": self.target_generator,
            "target_critic1": self.target_critic1,
            "target_critic2": self.target_critic2,
        }

    def embedding(self, t):
        return self._embeddings[t - 1]

    def q_min(self, states, actions, target=False):
        c1, c2 = ((self.target_critic1, self.target_critic2) if target
                  else (self.critic1, self.critic2))
        x = np.concatenate([states, actions], axis=1)
        return np.minimum(c1.forward(x)[:, 0], c2.forward(x)[:, 0])


def _chain(agent, net, states, initial, noises, record=False):
    """Run the reverse chain from ``initial`` (= a^T); ``noises[t-1]`` is z at step t.

    Returns the pre-squash a^0 and, if ``record``, the per-step tapes.
    """
    sched = agent.schedule
    n = states.shape[0]
    a = initial
    tapes = []
    for t in range(sched.T, 0, -1):
        inv_sqrt_chi, eps_coef, sigma = sched.step_coefficients(t)
        emb = np.broadcast_to(agent.embedding(t), (n, agent.time_dim))
        x = np.concatenate([a, states, emb], axis=1)
        if record:
            eps, tape = net.forward_tape(x)
            tapes.append((t, tape))
        else:
            eps = net.forward(x)
        a = inv_sqrt_chi * a - eps_coef * eps
        if t > 1:
            a = a + sigma * noises[t - 1]
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite action in the denoising chain: {a}")
    return a, tapes


def _chain_backward(agent, net, tapes, grad_a0):
    """Parameter gradients of ``sum(grad_a0 * a^0)`` through every chain step."""
    grads = None
    g = grad_a0
    A = agent.action_dim
    for t, tape in reversed(tapes):
        inv_sqrt_chi, eps_coef, _ = agent.schedule.step_coefficients(t)
        pgrads, gx = net.backward_tape(tape, -eps_coef * g)
        grads = add_grads(grads, pgrads)
        g = inv_sqrt_chi * g + gx[:, :A]
    return grads, g


def _draw_noises(agent, n, rng):
    # one z per non-terminal step; index 0 (t = 1) stays unused
    return [None] + [rng.standard_normal((n, agent.action_dim))
                     for _ in range(1, agent.schedule.T)]


def denoise_sample(agent: GdmAgent, states, rng: np.random.Generator,
                   with_exploration=False, net=None, initial=None,
                   return_presquash=False):
    """Generate raw actions in ``[-1, 1]`` for encoded ``states``.

    ``initial`` overrides the a^T draw. With ``return_presquash`` the
    pre-tanh chain output is returned as well.
    """
    net = agent.generator if net is None else net
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    if single:
        states = states[None, :]
    n = states.shape[0]
    if initial is None:
        a_T = rng.standard_normal((n, agent.action_dim))
    else:
        a_T = np.broadcast_to(np.asarray(initial, dtype=float), (n, agent.action_dim)).copy()
    noises = _draw_noises(agent, n, rng)
    pre, _ = _chain(agent, net, states, a_T, noises)
    if with_exploration and agent.exploration_noise > 0:
        pre = pre + agent.exploration_noise * rng.standard_normal(pre.shape)
    out = np.tanh(pre)
    if single:
        out, pre = out[0], pre[0]
    return (out, pre) if return_presquash else out


def critic_update(agent: GdmAgent, batch, optimizers, rng: np.random.Generator,
                  bootstrap="next_state"):
    """One squared-error step for both critics; returns the mean pre-update loss."""
    states, actions, rewards, next_states = batch
    n = states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    y = rewards * agent.reward_scale
    if agent.discount > 0:
        if bootstrap == "next_state":
            a_next = denoise_sample(agent, next_states, rng, net=agent.target_generator)
            y = y + agent.discount * agent.q_min(next_states, a_next, target=True)
        else:
            y = y + agent.discount * agent.q_min(states, actions, target=True)
    x = np.concatenate([states, actions], axis=1)
    losses = []
    for critic, opt in zip((agent.critic1, agent.critic2), optimizers):
        q, tape = critic.forward_tape(x)
        err = q[:, 0] - y
        losses.append(float(np.mean(err ** 2)))
        grads, _ = critic.backward_tape(tape, (2.0 / n) * err[:, None])
        opt.step(critic.params, grads)
    return 0.5 * (losses[0] + losses[1])


def actor_objective_grads(agent: GdmAgent, states, rng: np.random.Generator):
    """Mean min-critic value of freshly generated actions and its parameter gradient.

    The gradient is that of the loss ``-mean(q)`` with respect to the
    generator parameters, taken through the whole denoising chain. A
    ``presquash_reg * mean(|pre|^2)`` term keeps the chain output out of
    the flat tails of tanh.
    """
    n = states.shape[0]
    a_T = rng.standard_normal((n, agent.action_dim))
    noises = _draw_noises(agent, n, rng)
    pre, tapes = _chain(agent, agent.generator, states, a_T, noises, record=True)
    a0 = np.tanh(pre)
    x = np.concatenate([states, a0], axis=1)
    q1, tape1 = agent.critic1.forward_tape(x)
    q2, tape2 = agent.critic2.forward_tape(x)
    use1 = q1[:, 0] <= q2[:, 0]
    q = np.where(use1, q1[:, 0], q2[:, 0])
    # d(-mean q)/dq_j routed to whichever critic is the minimum
    up1 = np.where(use1, -1.0 / n, 0.0)[:, None]
    up2 = np.where(use1, 0.0, -1.0 / n)[:, None]
    _, gx1 = agent.critic1.backward_tape(tape1, up1)
    _, gx2 = agent.critic2.backward_tape(tape2, up2)
    grad_a0 = (gx1 + gx2)[:, agent.state_dim:]
    grad_pre = grad_a0 * (1.0 - a0 * a0)
    if agent.presquash_reg > 0:
        grad_pre = grad_pre + (2.0 * agent.presquash_reg / n) * pre
    grads, _ = _chain_backward(agent, agent.generator, tapes, grad_pre)
    return float(q.mean()), grads


def actor_update(agent: GdmAgent, states, optimizer: Adam, rng: np.random.Generator):
    objective, grads = actor_objective_grads(agent, states, rng)
    if not np.isfinite(objective):
        raise NumericError("non-finite actor objective")
    optimizer.step(agent.generator.params, grads)
    return objective


def infer(agent: GdmAgent, state, env_config: EnvConfig, rng: np.random.Generator):
    """Noise-free (no exploration) contract menu for a market state."""
    raw = denoise_sample(agent, encode_state(state, env_config), rng)
    return decode_action(raw, env_config)


def make_agent(env_config: EnvConfig, train_config: TrainConfig, rng=None) -> GdmAgent:
    schedule = build_schedule(train_config.diffusion_steps, train_config.beta_lo,
                              train_config.beta_hi)
    rng = np.random.default_rng(train_config.seed) if rng is None else rng
    return GdmAgent(env_config.state_dim, env_config.action_dim, schedule,
                    hidden=train_config.hidden, time_dim=train_config.time_dim,
                    exploration_noise=train_config.exploration_noise,
                    discount=train_config.discount,
                    reward_scale=train_config.reward_scale,
                    presquash_reg=train_config.presquash_reg, rng=rng)


def evaluation_states(env_config: EnvConfig, n: int, seed: int):
    rng = np.random.default_rng(seed)
    return [sample_state(env_config, rng) for _ in range(n)]


def evaluate_policy(policy, env_config: EnvConfig, states, seed: int):
    """Mean reward, feasibility rate and menus of ``policy(encoded_states, rng)``.

    ``policy`` maps a batch of encoded states to raw actions.
    """
    env = MarketEnv(env_config, seed)
    raw = policy(encode_states(states, env_config), np.random.default_rng(seed))
    rewards, menus, feasible = [], [], []
    for state, a in zip(states, raw):
        menu = decode_action(a, env_config)
        menus.append(menu)
        rewards.append(env.reward(state, a))
        feasible.append(is_feasible(menu, state.population()))
    return {
        "mean_reward": float(np.mean(rewards)),
        "rewards": np.array(rewards),
        "feasible_rate": float(np.mean(feasible)),
        "menus": menus,
    }


def gdm_policy(agent: GdmAgent):
    return lambda enc, rng: denoise_sample(agent, enc, rng)


def training_env_config(env_config: EnvConfig, penalty_policy=None) -> EnvConfig:
    """The environment as seen during training, with an optional reward penalty override."""
    if penalty_policy is None:
        return env_config
    return dataclasses.replace(env_config, penalty_policy=penalty_policy)


@dataclass
class TrainResult:
    agent: object
    metrics: list = field(default_factory=list)


def train(env_config: EnvConfig, train_config: TrainConfig, progress=None) -> TrainResult:
    """Run the full off-policy training loop.

    Each episode record carries the mean exploration reward; every
    ``eval_every`` episodes (and after the last) the noise-free policy is
    scored on a fixed set of evaluation states.
    """
    train_config.validate()
    rng = np.random.default_rng(train_config.seed)
    agent = make_agent(env_config, train_config, np.random.default_rng(train_config.seed + 1))
    env = MarketEnv(training_env_config(env_config, train_config.penalty_policy),
                    train_config.seed + 2)
    buffer = ReplayBuffer(train_config.buffer_capacity, env_config.state_dim,
                          env_config.action_dim)
    actor_opt = Adam(agent.generator.params, lr=train_config.actor_lr)
    critic_opts = (Adam(agent.critic1.params, lr=train_config.critic_lr),
                   Adam(agent.critic2.params, lr=train_config.critic_lr))
    eval_states = evaluation_states(env_config, train_config.eval_states,
                                    train_config.eval_seed)
    warmup = max(train_config.warmup, train_config.batch_size)

    metrics = []
    start = time.perf_counter()
    state = env.reset()
    for episode in range(train_config.episodes):
        ep_rewards = []
        for _ in range(train_config.steps_per_episode):
            s_enc = encode_state(state, env_config)
            action = denoise_sample(agent, s_enc, rng, with_exploration=True)
            reward = env.reward(state, action)
            next_state = env.reset()
            buffer.add(s_enc, action, reward, encode_state(next_state, env_config))
            ep_rewards.append(reward)
            state = next_state
            if len(buffer) >= warmup:
                batch = buffer.sample(train_config.batch_size, rng)
                critic_update(agent, batch, critic_opts, rng, train_config.bootstrap)
                actor_update(agent, batch[0], actor_opt, rng)
                eta = train_config.soft_update
                soft_update(agent.target_generator, agent.generator, eta)
                soft_update(agent.target_critic1, agent.critic1, eta)
                soft_update(agent.target_critic2, agent.critic2, eta)
        record = {
            "episode": episode,
            "train_reward": float(np.mean(ep_rewards)),
            "eval_reward": float("nan"),
            "feasible_rate": float("nan"),
        }
        last = episode == train_config.episodes - 1
        if (episode + 1) % train_config.eval_every == 0 or last:
            ev = evaluate_policy(gdm_policy(agent), env_config, eval_states,
                                 train_config.eval_seed)
            record["eval_reward"] = ev["mean_reward"]
            record["feasible_rate"] = ev["feasible_rate"]
        record["wall_clock"] = time.perf_counter() - start
        metrics.append(record)
        if progress is not None:
            progress(record)
        log.info("gdm episode %d: %s", episode, record)
    return TrainResult(agent, metrics)
