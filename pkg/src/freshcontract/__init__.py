"""Freshness-aware data-sharing contracts.

Age-of-information freshness model, contract-theoretic utilities with IR/IC
constraints, a diffusion-policy solver and its baselines, and multi-modal
similarity re-ranking over precomputed features.
"""

from .contract import (
    ContractItem,
    ContractMenu,
    HolderPopulation,
    HolderType,
    PenaltyPolicy,
    ProviderParams,
    is_feasible,
    mdp_reward,
    provider_expected_utility,
)
from .env import EnvConfig, MarketEnv, MarketState
from .freshness import TimingModel, aoi_slot_oracle, average_aoi, freshness_quality

__version__ = "0.1.0"

__all__ = [
    "ContractItem",
    "ContractMenu",
    "EnvConfig",
    "HolderPopulation",
    "HolderType",
    "MarketEnv",
    "MarketState",
    "PenaltyPolicy",
    "ProviderParams",
    "TimingModel",
    "aoi_slot_oracle",
    "average_aoi",
    "freshness_quality",
    "is_feasible",
    "mdp_reward",
    "provider_expected_utility",
]
