"""Holder and provider utilities, IR/IC feasibility and the MDP reward.

A menu offers one (update frequency, reward) item per holder type. Holder
types are indexed in ascending order of ``delta`` (inverse update cost), so
type ``K - 1`` is the cheapest to update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .freshness import TimingModel, average_aoi, freshness_quality

#: slack on every ``>=`` check so float noise at a boundary cannot flip it
TOLERANCE = 1e-12


class MenuShapeError(ValueError):
    """A menu does not have one item per holder type."""


@dataclass(frozen=True)
class HolderType:
    delta: float
    probability: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"holder type delta must be positive, got {self.delta}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must lie in [0, 1], got {self.probability}")

    @property
    def update_cost(self) -> float:
        return 1.0 / self.delta


@dataclass(frozen=True)
class HolderPopulation:
    """``K`` holder types, sorted ascending by delta, over ``holder_count`` holders."""

    types: tuple[HolderType, ...]
    holder_count: int = 1

    def __post_init__(self):
        if len(self.types) == 0:
            raise ValueError("population needs at least one holder type")
        if self.holder_count < 1:
            raise ValueError(f"holder_count must be positive, got {self.holder_count}")
        total = sum(h.probability for h in self.types)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"type probabilities must sum to 1, got {total}")
        ordered = tuple(sorted(self.types, key=lambda h: h.delta))
        object.__setattr__(self, "types", ordered)

    @classmethod
    def from_arrays(cls, deltas, probabilities, holder_count=1) -> "HolderPopulation":
        types = tuple(
            HolderType(float(d), float(q)) for d, q in zip(deltas, probabilities)
        )
        if len(types) != len(deltas) or len(deltas) != len(probabilities):
            raise ValueError("deltas and probabilities must have equal length")
        return cls(types, holder_count)

    @property
    def K(self) -> int:
        return len(self.types)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([h.delta for h in self.types])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([h.probability for h in self.types])


@dataclass(frozen=True)
class ContractItem:
    frequency: float
    reward: float

    def __post_init__(self):
        if not self.frequency >= 0:
            raise ValueError(f"update frequency must be >= 0, got {self.frequency}")
        if not self.reward >= 0:
            raise ValueError(f"reward must be >= 0, got {self.reward}")
        if self.frequency > 1.0:
            raise ValueError(
                f"update frequency above one per slot is meaningless, got {self.frequency}"
            )

    @property
    def cycle_length(self) -> float:
        if self.frequency == 0:
            return float("inf")
        return 1.0 / self.frequency


@dataclass(frozen=True)
class ContractMenu:
    """One item per holder type; item ``k`` is meant for type ``k``."""

    items: tuple[ContractItem, ...]

    @classmethod
    def from_arrays(cls, frequencies, rewards) -> "ContractMenu":
        if len(frequencies) != len(rewards):
            raise MenuShapeError("frequencies and rewards must have equal length")
        return cls(
            tuple(ContractItem(float(f), float(r)) for f, r in zip(frequencies, rewards))
        )

    def __len__(self):
        return len(self.items)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([it.frequency for it in self.items])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([it.reward for it in self.items])


@dataclass(frozen=True)
class ProviderParams:
    accuracy: float
    unit_profit: float
    max_aoi: float
    timing: TimingModel
    penalty: float = -100.0

    def __post_init__(self):
        if not self.accuracy > 0:
            raise ValueError(f"accuracy must be positive, got {self.accuracy}")
        if not self.unit_profit > 0:
            raise ValueError(f"unit_profit must be positive, got {self.unit_profit}")
        if not self.max_aoi > 0:
            raise ValueError(f"max_aoi must be positive, got {self.max_aoi}")
        if not self.penalty <= 0:
            raise ValueError(f"penalty must be <= 0, got {self.penalty}")

    def with_max_aoi(self, max_aoi: float) -> "ProviderParams":
        return ProviderParams(
            self.accuracy, self.unit_profit, max_aoi, self.timing, self.penalty
        )


@dataclass(frozen=True)
class PenaltyPolicy:
    """How an infeasible menu is scored.

    ``constant`` returns the provider's ``penalty`` as is. ``graded`` returns
    ``-scale * total_violation`` floored at the provider's ``penalty``.
    ``shaped`` returns ``utility - scale * total_violation`` with the same
    floor; it is continuous across the feasibility boundary, which makes it
    a usable training signal. With a positive ``margin`` the shaped penalty
    measures violation against constraints tightened by ``margin`` and also
    bites on feasible menus that sit closer than that to the boundary.
    """

    mode: str = "graded"
    scale: float = 100.0
    margin: float = 0.0

    def __post_init__(self):
        if self.mode not in ("constant", "graded", "shaped"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")
        if not self.scale > 0:
            raise ValueError(f"penalty scale must be positive, got {self.scale}")
        if self.margin < 0:
            raise ValueError(f"penalty margin must be >= 0, got {self.margin}")
        if self.margin > 0 and self.mode != "shaped":
            raise ValueError("a penalty margin only applies to the shaped mode")


DEFAULT_PENALTY = PenaltyPolicy()

#: reward the learners train against; evaluation keeps the environment's own policy
TRAINING_PENALTY = PenaltyPolicy("shaped", 1e3, margin=0.05)


def _check_shape(menu: ContractMenu, pop: HolderPopulation):
    if len(menu) != pop.K:
        raise MenuShapeError(
            f"menu has {len(menu)} items but the population has {pop.K} types"
        )


def holder_utility(item: ContractItem, holder: HolderType) -> float:
    return item.reward - item.frequency / holder.delta


def satisfaction_at(frequency, params: ProviderParams):
    """Provider satisfaction for update frequency ``frequency`` (scalar or array)."""
    f = np.asarray(frequency, dtype=float)
    if np.any(f <= 0) or np.any(f > 1.0 + TOLERANCE):
        raise ValueError(f"satisfaction needs 0 < f <= 1, got {frequency}")
    theta = 1.0 / f
    t = params.timing.slot_length
    aoi = t * (1.0 / theta + theta / 2.0 + 0.5)
    s = params.accuracy * np.log(params.max_aoi / aoi + 1.0)
    return float(s) if s.ndim == 0 else s


def satisfaction(item: ContractItem, params: ProviderParams) -> float:
    if item.frequency <= 0:
        raise ValueError("satisfaction is undefined for a zero update frequency")
    aoi = average_aoi(params.timing, 1.0 / item.frequency)
    return params.accuracy * np.log(freshness_quality(aoi, params.max_aoi) + 1.0)


def provider_expected_utility(
    menu: ContractMenu, pop: HolderPopulation, params: ProviderParams
) -> float:
    _check_shape(menu, pop)
    s = np.array([satisfaction(it, params) for it in menu.items])
    return float(np.sum(pop.probabilities * (params.unit_profit * s - menu.rewards)))


def check_ir(menu: ContractMenu, pop: HolderPopulation) -> list[bool]:
    _check_shape(menu, pop)
    return [
        holder_utility(it, h) >= -TOLERANCE for it, h in zip(menu.items, pop.types)
    ]


def check_ic(menu: ContractMenu, pop: HolderPopulation) -> np.ndarray:
    """Boolean ``K x K`` matrix; entry ``(k, i)`` says type ``k`` prefers item ``k`` to item ``i``."""
    _check_shape(menu, pop)
    f, r, d = menu.frequencies, menu.rewards, pop.deltas
    # own[k] is type k's utility of its own item; cross[k, i] of item i
    own = r - f / d
    cross = r[None, :] - f[None, :] / d[:, None]
    ok = own[:, None] - cross >= -TOLERANCE
    np.fill_diagonal(ok, True)
    return ok


def is_feasible(menu: ContractMenu, pop: HolderPopulation) -> bool:
    if not all(check_ir(menu, pop)):
        return False
    if not check_ic(menu, pop).all():
        return False
    return bool(np.all(menu.frequencies >= 0) and np.all(menu.rewards >= 0))


def total_violation(
    menu: ContractMenu, pop: HolderPopulation, margin: float = 0.0
) -> float:
    """Sum of the positive parts of every IR, IC and sign-constraint shortfall.

    ``margin`` tightens each IR and IC constraint by that amount.
    """
    _check_shape(menu, pop)
    f, r, d = menu.frequencies, menu.rewards, pop.deltas
    own = r - f / d
    cross = r[None, :] - f[None, :] / d[:, None]
    ic = np.maximum(0.0, cross - own[:, None] + margin)
    np.fill_diagonal(ic, 0.0)
    v = np.maximum(0.0, margin - own).sum() + ic.sum()
    v += np.maximum(0.0, -f).sum() + np.maximum(0.0, -r).sum()
    return float(v)


def penalty_value(
    menu: ContractMenu,
    pop: HolderPopulation,
    params: ProviderParams,
    policy: PenaltyPolicy = DEFAULT_PENALTY,
    utility: float | None = None,
) -> float:
    if policy.mode == "constant":
        return params.penalty
    graded = -policy.scale * total_violation(menu, pop, policy.margin)
    if policy.mode == "shaped":
        if utility is None:
            utility = provider_expected_utility(menu, pop, params)
        graded += utility
    return max(graded, params.penalty)


def mdp_reward(
    menu: ContractMenu,
    pop: HolderPopulation,
    params: ProviderParams,
    policy: PenaltyPolicy = DEFAULT_PENALTY,
) -> float:
    """Expected provider utility if the menu is feasible, else the penalty.

    An infeasible menu never scores above its own expected utility, so
    violating a constraint can never pay.
    """
    utility = provider_expected_utility(menu, pop, params)
    if is_feasible(menu, pop):
        if policy.margin > 0:
            return min(penalty_value(menu, pop, params, policy, utility), utility)
        return utility
    return min(penalty_value(menu, pop, params, policy, utility), utility)
