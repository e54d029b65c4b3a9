"""
The contract market as an environment
=====================================

Each step draws a fresh market, shows the solver an encoded state, and
scores the menu decoded from its action in [-1, 1]^{2K}.
"""

import numpy as np

from freshcontract import EnvConfig, MarketEnv
from freshcontract.env import decode_action, encode_state

config = EnvConfig(r_bounds=(0.0, 2.0))
env = MarketEnv(config, seed=0)

state = env.reset()
print("deltas", np.round(state.deltas, 3), " type shares", np.round(state.probabilities, 3),
      f" max age {state.max_aoi:.1f}")
print("encoded state", np.round(encode_state(state, config), 3))

# The action box maps linearly onto frequencies and rewards.
rng = np.random.default_rng(1)
for _ in range(3):
    raw = rng.uniform(-1, 1, config.action_dim)
    menu = decode_action(raw, config)
    print("f", np.round(menu.frequencies, 3), "R", np.round(menu.rewards, 3),
          f"-> reward {env.reward(state, raw):9.3f}")

# Infeasible menus are scored by how far they break the constraints,
# floored at the provider's penalty, so a solver can tell near misses apart.
