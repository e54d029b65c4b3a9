"""Non-learning menu designers: complete information, greedy and random."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .contract import (
    TOLERANCE,
    ContractMenu,
    ProviderParams,
    is_feasible,
    provider_expected_utility,
    satisfaction_at,
)
from .env import ConfigError, EnvConfig, MarketState


@dataclass(frozen=True)
class GridSpec:
    f_step: float = 1e-3
    f_bounds: tuple = (0.01, 1.0)
    r_bounds: tuple = (0.0, 200.0)
    polish_tol: float = 1e-6

    def __post_init__(self):
        lo, hi = self.f_bounds
        if not (0 < lo < hi <= 1):
            raise ConfigError(f"frequency bounds {self.f_bounds} must satisfy 0 < lo < hi <= 1")
        if not (0 < self.f_step <= hi - lo):
            raise ConfigError(f"grid step {self.f_step} must lie in (0, {hi - lo}]")
        if not (0 <= self.r_bounds[0] < self.r_bounds[1]):
            raise ConfigError(f"reward bounds {self.r_bounds} need 0 <= low < high")

    def grid(self) -> np.ndarray:
        lo, hi = self.f_bounds
        n = int(np.floor((hi - lo) / self.f_step + 1e-9))
        g = lo + self.f_step * np.arange(n + 1)
        if g[-1] < hi - 1e-12:
            g = np.append(g, hi)
        return g


def _polish(objective, f0, step, lo, hi, tol):
    """Golden-section refinement of a grid maximizer within one grid step."""
    a, b = max(lo, f0 - step), min(hi, f0 + step)
    if b - a <= tol:
        return f0
    res = minimize_scalar(lambda f: -objective(f), bounds=(a, b), method="bounded",
                          options={"xatol": tol})
    return float(res.x) if -res.fun >= objective(f0) else f0


def complete_info_optimum(state: MarketState, params: ProviderParams,
                          grid: GridSpec = GridSpec()):
    """Full-surplus menu when every holder's type is observable.

    Each type gets the frequency maximizing ``beta * S(f) - f / delta``
    and exactly its update cost as reward, so IR binds and IC is ignored.
    Returns ``(menu, utility)``.
    """
    params = params.with_max_aoi(state.max_aoi)
    fs = grid.grid()
    if fs.size == 0:
        raise ConfigError("empty frequency grid")
    beta = params.unit_profit
    sat = satisfaction_at(fs, params)
    freqs, rewards = [], []
    for delta in state.deltas:
        profit = beta * sat - fs / delta
        f0 = float(fs[np.argmax(profit)])

        def objective(f, delta=delta):
            return beta * satisfaction_at(f, params) - f / delta

        f = _polish(objective, f0, grid.f_step, *grid.f_bounds, grid.polish_tol)
        freqs.append(f)
        rewards.append(f / delta)
    menu = ContractMenu.from_arrays(freqs, rewards)
    return menu, provider_expected_utility(menu, state.population(), params)


def _min_reward(f, k, freqs, rewards, deltas, r_lo):
    """Smallest reward meeting type k's IR and its IC against items fixed so far."""
    r = max(f / deltas[k], r_lo)
    for i in range(k):
        r = max(r, rewards[i] + (f - freqs[i]) / deltas[k])
    return r


def _upward_ok(f, r, k, freqs, rewards, deltas):
    # earlier types must not prefer the new item
    return all(
        rewards[i] - freqs[i] / deltas[i] >= r - f / deltas[i] - TOLERANCE
        for i in range(k)
    )


def greedy_menu(state: MarketState, params: ProviderParams,
                grid: GridSpec = GridSpec()) -> ContractMenu:
    """Myopic IC-respecting menu built one type at a time in ascending delta.

    Each type picks the frequency with the best per-type profit
    ``beta * S(f) - R(f)``, where ``R(f)`` is the cheapest reward that keeps
    the new item individually rational and incentive compatible against
    every item already fixed. Frequencies never decrease along the types,
    which keeps the finished menu feasible.
    """
    params = params.with_max_aoi(state.max_aoi)
    fs = grid.grid()
    beta = params.unit_profit
    sat = satisfaction_at(fs, params)
    deltas = state.deltas
    r_lo, r_hi = grid.r_bounds
    freqs, rewards = [], []
    for k in range(len(deltas)):
        f_floor = freqs[-1] if freqs else grid.f_bounds[0]

        def profit(f):
            r = _min_reward(f, k, freqs, rewards, deltas, r_lo)
            if r > r_hi or not _upward_ok(f, r, k, freqs, rewards, deltas):
                return -np.inf
            return beta * float(satisfaction_at(f, params)) - r

        values = np.full(fs.size, -np.inf)
        for j in np.flatnonzero(fs >= f_floor - 1e-15):
            r = _min_reward(fs[j], k, freqs, rewards, deltas, r_lo)
            if r <= r_hi and _upward_ok(fs[j], r, k, freqs, rewards, deltas):
                values[j] = beta * sat[j] - r
        if freqs:
            # pooling with the previous item is always admissible
            candidates = [(profit(f_floor), f_floor)]
        else:
            candidates = []
        if np.isfinite(values).any():
            f0 = float(fs[np.argmax(values)])
            f = _polish(profit, f0, grid.f_step, f_floor, grid.f_bounds[1], grid.polish_tol)
            candidates.append((profit(f), f))
        if not candidates or not np.isfinite(max(candidates)[0]):
            raise ConfigError("no admissible frequency for greedy construction")
        _, f = max(candidates)
        freqs.append(f)
        rewards.append(_min_reward(f, k, freqs, rewards, deltas, r_lo))
    menu = ContractMenu.from_arrays(freqs, rewards)
    assert is_feasible(menu, state.population()), "greedy produced an infeasible menu"
    return menu


def random_menu(state: MarketState, bounds: EnvConfig, rng: np.random.Generator):
    """Uniform draws inside the action box, with no feasibility repair."""
    K = state.type_count
    f = rng.uniform(*bounds.f_bounds, size=K)
    r = rng.uniform(*bounds.r_bounds, size=K)
    return ContractMenu.from_arrays(f, r)
