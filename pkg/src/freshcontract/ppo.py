"""Clipped-surrogate PPO over the same market environment.

The policy is a diagonal Gaussian over pre-squash actions ``u``; the
executed action is ``tanh(u)``, decoded exactly like the diffusion
policy's output. States are i.i.d., so every step ends its own episode.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .contract import TRAINING_PENALTY, PenaltyPolicy
from .env import ConfigError, EnvConfig, MarketEnv, encode_state
from .gdm import TrainResult, evaluate_policy, evaluation_states, training_env_config
from .tensorlite import Adam, DenseNet, NumericError

log = logging.getLogger(__name__)

LOG_STD_BOUNDS = (-5.0, 2.0)
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class PpoConfig:
    episodes: int = 50
    rollout_length: int = 2048
    epochs: int = 10
    minibatch_size: int = 256
    lr: float = 3e-4
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    discount: float = 0.99
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    init_log_std: float = -0.5
    hidden: tuple = (256, 256)
    reward_scale: float = 0.002
    penalty_policy: PenaltyPolicy | None = TRAINING_PENALTY
    eval_every: int = 5
    eval_states: int = 200
    eval_seed: int = 12345
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        for name in ("episodes", "rollout_length", "epochs", "minibatch_size",
                     "eval_every", "eval_states"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("lr", "clip_ratio", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gae_lambda", "discount"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")


def gaussian_log_prob(u, mean, log_std):
    """Log density of a diagonal Gaussian, summed over the last axis."""
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def squash_correction(u):
    """``sum log(1 - tanh(u)^2)``, computed stably."""
    return np.sum(2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


class PpoAgent:
    def __init__(self, state_dim, action_dim, hidden=(256, 256), clip_ratio=0.2,
                 gae_lambda=0.95, discount=0.99, init_log_std=-0.5, reward_scale=1.0,
                 rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = tuple(hidden)
        self.policy = DenseNet([state_dim, *hidden, action_dim], "tanh", "identity", rng)
        # small output layer so the initial policy is centred
        self.policy.weights[-1] *= 0.01
        self.policy.biases[-1] *= 0.0
        self.log_std = np.full(action_dim, float(init_log_std))
        self.value = DenseNet([state_dim, *hidden, 1], "tanh", "identity", rng)
        self.clip_ratio = clip_ratio
        self.gae_lambda = gae_lambda
        self.discount = discount
        self.reward_scale = reward_scale

    def networks(self):
        return {"policy": self.policy, "value": self.value}

    def sample(self, states, rng):
        """Pre-squash samples, their log-probs (with squash correction) and means."""
        mean = self.policy.forward(states)
        u = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        logp = gaussian_log_prob(u, mean, self.log_std) - squash_correction(u)
        return u, logp, mean

    def act_deterministic(self, states):
        return np.tanh(self.policy.forward(states))


@dataclass
class RolloutBuffer:
    states: np.ndarray
    pre_actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def __len__(self):
        return self.rewards.shape[0]

    @property
    def actions(self):
        return np.tanh(self.pre_actions)


def compute_gae(rewards, values, dones, last_value, discount, lam):
    """Generalized advantage estimates and returns over one trajectory."""
    n = rewards.shape[0]
    adv = np.zeros(n)
    running = 0.0
    for i in reversed(range(n)):
        nonterminal = 1.0 - dones[i]
        next_value = last_value if i == n - 1 else values[i + 1]
        delta = rewards[i] + discount * next_value * nonterminal - values[i]
        running = delta + discount * lam * nonterminal * running
        adv[i] = running
    return adv, adv + values


def normalize(x):
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-8 else 1.0)


def collect_rollout(agent: PpoAgent, env: MarketEnv, horizon: int, rng) -> RolloutBuffer:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = [env.reset() for _ in range(horizon)]
    enc = np.stack([encode_state(s, env.config) for s in states])
    u, logp, _ = agent.sample(enc, rng)
    actions = np.tanh(u)
    rewards = np.array([env.reward(s, a) for s, a in zip(states, actions)])
    values = agent.value.forward(enc)[:, 0]
    buf = RolloutBuffer(enc, u, logp, rewards * agent.reward_scale, values,
                        np.ones(horizon))
    refresh_advantages(agent, buf)
    return buf


def refresh_advantages(agent: PpoAgent, buf: RolloutBuffer):
    """Recompute advantages from the current value net, then normalize them."""
    buf.values = agent.value.forward(buf.states)[:, 0]
    adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, 0.0,
                           agent.discount, agent.gae_lambda)
    buf.returns = ret
    buf.advantages = normalize(adv)


def surrogate_grads(agent: PpoAgent, states, pre_actions, old_log_probs, advantages,
                    clip_ratio=None):
    """Clipped-surrogate loss and its gradients for the policy net and ``log_std``.

    ``old_log_probs`` must include the squash correction; it cancels in the
    ratio since it depends on ``u`` alone.
    """
    clip_ratio = agent.clip_ratio if clip_ratio is None else clip_ratio
    n = states.shape[0]
    mean, tape = agent.policy.forward_tape(states)
    logp = gaussian_log_prob(pre_actions, mean, agent.log_std) - squash_correction(pre_actions)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    loss = -np.mean(np.minimum(unclipped_obj, clipped_obj))
    # gradient flows only where the unclipped term is the active minimum
    active = unclipped_obj <= clipped_obj
    d_ratio = np.where(active, -advantages / n, 0.0)
    inv_var = np.exp(-2.0 * agent.log_std)
    diff = pre_actions - mean
    d_logp = (d_ratio * ratio)[:, None]
    grad_mean = d_logp * diff * inv_var
    grad_log_std = np.sum(d_logp * (diff * diff * inv_var - 1.0), axis=0)
    pgrads, _ = agent.policy.backward_tape(tape, grad_mean)
    return loss, pgrads, grad_log_std, ratio


def ppo_update(agent: PpoAgent, buf: RolloutBuffer, epochs: int, minibatch_size: int,
               rng, optimizers, value_coef=0.5, entropy_coef=0.0):
    """Several epochs of minibatch PPO; returns mean policy, value and entropy losses."""
    if len(buf) == 0:
        raise ValueError("empty rollout buffer")
    pol_opt, std_opt, val_opt = optimizers
    n = len(buf)
    stats = {"policy_loss": [], "value_loss": [], "entropy": []}
    for _ in range(epochs):
        refresh_advantages(agent, buf)
        order = rng.permutation(n)
        for start in range(0, n, minibatch_size):
            idx = order[start:start + minibatch_size]
            loss, pgrads, g_std, _ = surrogate_grads(
                agent, buf.states[idx], buf.pre_actions[idx], buf.log_probs[idx],
                buf.advantages[idx])
            entropy = float(np.sum(agent.log_std + 0.5 * (1.0 + _LOG_2PI)))
            g_std = g_std - entropy_coef * np.ones_like(agent.log_std)
            v, vtape = agent.value.forward_tape(buf.states[idx])
            err = v[:, 0] - buf.returns[idx]
            vgrads, _ = agent.value.backward_tape(
                vtape, (2.0 * value_coef / idx.size) * err[:, None])
            if not (np.isfinite(loss) and np.all(np.isfinite(g_std))):
                raise NumericError("non-finite PPO loss")
            pol_opt.step(agent.policy.params, pgrads)
            std_opt.step([agent.log_std], [g_std])
            np.clip(agent.log_std, *LOG_STD_BOUNDS, out=agent.log_std)
            val_opt.step(agent.value.params, vgrads)
            stats["policy_loss"].append(loss)
            stats["value_loss"].append(float(np.mean(err ** 2)))
            stats["entropy"].append(entropy)
    return {k: float(np.mean(v)) for k, v in stats.items()}


def make_ppo_agent(env_config: EnvConfig, config: PpoConfig, rng=None) -> PpoAgent:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    return PpoAgent(env_config.state_dim, env_config.action_dim, config.hidden,
                    config.clip_ratio, config.gae_lambda, config.discount,
                    config.init_log_std, config.reward_scale, rng)


def make_optimizers(agent: PpoAgent, lr: float):
    return (Adam(agent.policy.params, lr=lr), Adam([agent.log_std], lr=lr),
            Adam(agent.value.params, lr=lr))


def ppo_policy(agent: PpoAgent):
    return lambda enc, rng: agent.act_deterministic(enc)


def train_ppo(env_config: EnvConfig, config: PpoConfig, progress=None) -> TrainResult:
    """Alternate rollout collection and clipped updates.

    One episode is one rollout of ``rollout_length`` steps followed by its
    update; the records share the diffusion trainer's schema.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    agent = make_ppo_agent(env_config, config, np.random.default_rng(config.seed + 1))
    env = MarketEnv(training_env_config(env_config, config.penalty_policy), config.seed + 2)
    optimizers = make_optimizers(agent, config.lr)
    eval_states = evaluation_states(env_config, config.eval_states, config.eval_seed)
    metrics = []
    start = time.perf_counter()
    for episode in range(config.episodes):
        buf = collect_rollout(agent, env, config.rollout_length, rng)
        ppo_update(agent, buf, config.epochs, config.minibatch_size, rng, optimizers,
                   config.value_coef, config.entropy_coef)
        record = {
            "episode": episode,
            "train_reward": float(np.mean(buf.rewards) / agent.reward_scale),
            "eval_reward": float("nan"),
            "feasible_rate": float("nan"),
        }
        if (episode + 1) % config.eval_every == 0 or episode == config.episodes - 1:
            ev = evaluate_policy(ppo_policy(agent), env_config, eval_states,
                                 config.eval_seed)
            record["eval_reward"] = ev["mean_reward"]
            record["feasible_rate"] = ev["feasible_rate"]
        record["wall_clock"] = time.perf_counter() - start
        metrics.append(record)
        if progress is not None:
            progress(record)
        log.info("ppo episode %d: %s", episode, record)
    return TrainResult(agent, metrics)
