"""
Designing a contract menu
=========================

A provider offers one (update frequency, reward) item per holder type
without knowing which holder has which cost. A menu is usable only if
every type gains from joining (IR) and prefers its own item (IC).
"""

import numpy as np

from freshcontract import (
    ContractMenu,
    ProviderParams,
    TimingModel,
    is_feasible,
    provider_expected_utility,
)
from freshcontract.baselines import complete_info_optimum, greedy_menu
from freshcontract.contract import check_ic, check_ir, total_violation
from freshcontract.env import MarketState

provider = ProviderParams(accuracy=39.9, unit_profit=10.0, max_aoi=45.0,
                          timing=TimingModel.from_slot_length(2.0))
state = MarketState(holder_count=10, max_aoi=45.0, probabilities=[0.4, 0.6],
                    deltas=[3.0, 15.0])
pop = state.population()

# Low-cost holders (large delta) are asked for more frequent updates.
menu = ContractMenu.from_arrays([0.5, 0.7], [0.5, 0.52])
print("IR per type:", check_ir(menu, pop))
print("IC matrix:\n", np.asarray(check_ic(menu, pop)))
print(f"feasible: {is_feasible(menu, pop)}, "
      f"utility {provider_expected_utility(menu, pop, provider):.3f}")

# Swapping the rewards tempts the first type to take the second item.
bad = ContractMenu.from_arrays([0.5, 0.7], [0.52, 0.5])
print(f"swapped menu feasible: {is_feasible(bad, pop)}, "
      f"total violation {total_violation(bad, pop):.4f}")

# If types were observable, each item would just cover its holder's cost.
best, u_best = complete_info_optimum(state, provider)
print("complete information:", np.round(best.frequencies, 4), np.round(best.rewards, 4),
      f"utility {u_best:.3f}")

# Without that knowledge, the greedy grid search builds a feasible menu type by type.
g = greedy_menu(state, provider)
print("greedy:", np.round(g.frequencies, 4), np.round(g.rewards, 4),
      f"utility {provider_expected_utility(g, pop, provider):.3f}")
