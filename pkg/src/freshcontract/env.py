"""Market-state sampling, network featurization and action decoding.

States are drawn i.i.d. at every step, so the decision problem is a
contextual bandit: the consequence of a menu is fully captured by its
immediate reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .contract import (
    DEFAULT_PENALTY,
    ContractMenu,
    HolderPopulation,
    PenaltyPolicy,
    ProviderParams,
    mdp_reward,
)
from .freshness import TimingModel

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for an inconsistent or out-of-range configuration."""


@dataclass(frozen=True)
class MarketState:
    holder_count: int
    max_aoi: float
    probabilities: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.probabilities, dtype=float)
        d = np.asarray(self.deltas, dtype=float)
        object.__setattr__(self, "probabilities", q)
        object.__setattr__(self, "deltas", d)
        if q.ndim != 1 or q.shape != d.shape or q.size < 1:
            raise ValueError("probabilities and deltas must be equal-length vectors")
        if abs(q.sum() - 1.0) > 1e-9 or np.any(q < 0):
            raise ValueError(f"probabilities must lie on the simplex, got {q}")
        if np.any(d <= 0) or np.any(np.diff(d) < 0):
            raise ValueError(f"deltas must be positive and ascending, got {d}")
        if not self.max_aoi > 0:
            raise ValueError(f"max_aoi must be positive, got {self.max_aoi}")

    @property
    def type_count(self) -> int:
        return self.deltas.size

    def population(self) -> HolderPopulation:
        return HolderPopulation.from_arrays(
            self.deltas, self.probabilities, self.holder_count
        )


@dataclass(frozen=True)
class EnvConfig:
    """Sampling protocol for market states plus the action box.

    The defaults reproduce the two-type setting used in the experiments
    (ten holders, accuracy 39.9, unit profit 10, slot length 2).
    """

    delta_ranges: tuple = ((1.0, 6.0), (13.0, 18.0))
    max_aoi_range: tuple = (30.0, 60.0)
    dirichlet_concentration: tuple = (1.0, 1.0)
    holder_count: int = 10
    accuracy: float = 39.9
    unit_profit: float = 10.0
    timing: TimingModel = field(default_factory=lambda: TimingModel.from_slot_length(2.0))
    penalty: float = -100.0
    penalty_policy: PenaltyPolicy = DEFAULT_PENALTY
    f_bounds: tuple = (0.01, 1.0)
    r_bounds: tuple = (0.0, 200.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "delta_ranges", tuple(tuple(map(float, r)) for r in self.delta_ranges)
        )
        object.__setattr__(
            self,
            "dirichlet_concentration",
            tuple(float(a) for a in self.dirichlet_concentration),
        )
        K = len(self.delta_ranges)
        if K < 1:
            raise ConfigError("at least one holder type is required")
        for lo, hi in self.delta_ranges:
            if not (0 < lo <= hi):
                raise ConfigError(f"delta range ({lo}, {hi}) must satisfy 0 < low <= high")
        lo, hi = self.max_aoi_range
        if not (0 < lo <= hi):
            raise ConfigError(f"max_aoi range ({lo}, {hi}) must satisfy 0 < low <= high")
        if len(self.dirichlet_concentration) != K:
            raise ConfigError("one Dirichlet concentration per holder type is required")
        if any(a <= 0 for a in self.dirichlet_concentration):
            raise ConfigError("Dirichlet concentrations must be positive")
        f_lo, f_hi = self.f_bounds
        if not (0 <= f_lo < f_hi <= 1):
            raise ConfigError(f"frequency bounds {self.f_bounds} must lie in [0, 1]")
        r_lo, r_hi = self.r_bounds
        if not (0 <= r_lo < r_hi):
            raise ConfigError(f"reward bounds {self.r_bounds} need 0 <= low < high")
        if self.holder_count < 1:
            raise ConfigError("holder_count must be positive")
        self.provider  # validates accuracy, profit and penalty

    @property
    def K(self) -> int:
        return len(self.delta_ranges)

    @property
    def state_dim(self) -> int:
        return 1 + 2 * self.K

    @property
    def action_dim(self) -> int:
        return 2 * self.K

    @property
    def provider(self) -> ProviderParams:
        """Provider parameters with ``max_aoi`` at the top of its range."""
        return ProviderParams(
            self.accuracy, self.unit_profit, self.max_aoi_range[1], self.timing, self.penalty
        )

    def provider_for(self, state: MarketState) -> ProviderParams:
        return self.provider.with_max_aoi(state.max_aoi)


def sample_dirichlet(concentration, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw as normalized Gamma(a_i, 1) variates."""
    g = rng.gamma(np.asarray(concentration, dtype=float), 1.0)
    total = g.sum()
    if total == 0.0:
        # every shape tiny enough to underflow; fall back on a one-hot draw
        g = np.zeros_like(g)
        g[rng.integers(g.size)] = 1.0
        total = 1.0
    return g / total


def sample_state(config: EnvConfig, rng: np.random.Generator) -> MarketState:
    deltas = np.array([rng.uniform(lo, hi) for lo, hi in config.delta_ranges])
    deltas.sort()
    max_aoi = rng.uniform(*config.max_aoi_range)
    q = sample_dirichlet(config.dirichlet_concentration, rng)
    return MarketState(config.holder_count, float(max_aoi), q, deltas)


def encode_state(state: MarketState, config: EnvConfig) -> np.ndarray:
    """``[max_aoi / hi, Q_1..Q_K, delta_1 / hi_1 .. delta_K / hi_K]``."""
    if state.type_count != config.K:
        raise ValueError(
            f"state has {state.type_count} types but the config expects {config.K}"
        )
    d_hi = np.array([hi for _, hi in config.delta_ranges])
    return np.concatenate(
        [[state.max_aoi / config.max_aoi_range[1]], state.probabilities, state.deltas / d_hi]
    )


def encode_states(states, config: EnvConfig) -> np.ndarray:
    return np.stack([encode_state(s, config) for s in states])


def _action_scales(config: EnvConfig):
    lo = np.tile([config.f_bounds[0], config.r_bounds[0]], config.K)
    hi = np.tile([config.f_bounds[1], config.r_bounds[1]], config.K)
    return lo, hi


def decode_action(raw, config: EnvConfig) -> ContractMenu:
    """Map a raw action in ``[-1, 1]^{2K}`` onto the (f, R) box.

    Even coordinates become frequencies, odd coordinates rewards.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (config.action_dim,):
        raise ValueError(f"raw action must have length {config.action_dim}, got {raw.shape}")
    if np.any(np.abs(raw) > 1.0):
        log.debug("clamping raw action %s into [-1, 1]", raw)
        raw = np.clip(raw, -1.0, 1.0)
    lo, hi = _action_scales(config)
    values = lo + (raw + 1.0) * 0.5 * (hi - lo)
    # float rounding must not leave the box
    values = np.clip(values, lo, hi)
    return ContractMenu.from_arrays(values[0::2], values[1::2])


def encode_action(menu: ContractMenu, config: EnvConfig) -> np.ndarray:
    """Inverse of :func:`decode_action` on the interior of the box."""
    if len(menu) != config.K:
        raise ValueError(f"menu has {len(menu)} items, config expects {config.K}")
    lo, hi = _action_scales(config)
    values = np.empty(config.action_dim)
    values[0::2] = menu.frequencies
    values[1::2] = menu.rewards
    return 2.0 * (values - lo) / (hi - lo) - 1.0


def env_step(
    state: MarketState,
    menu: ContractMenu,
    params: ProviderParams,
    policy: PenaltyPolicy = DEFAULT_PENALTY,
) -> float:
    """Reward of offering ``menu`` in ``state``; ``max_aoi`` comes from the state."""
    return mdp_reward(menu, state.population(), params.with_max_aoi(state.max_aoi), policy)


class MarketEnv:
    """Owns an RNG and hands out i.i.d. market states."""

    def __init__(self, config: EnvConfig, seed=None):
        self.config = config
        self.rng = np.random.default_rng(config.seed if seed is None else seed)

    def reset(self) -> MarketState:
        return sample_state(self.config, self.rng)

    def reward(self, state: MarketState, raw_action) -> float:
        menu = decode_action(raw_action, self.config)
        return env_step(
            state, menu, self.config.provider_for(state), self.config.penalty_policy
        )
