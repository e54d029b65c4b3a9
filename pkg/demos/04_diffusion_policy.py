"""
Training the diffusion policy
=============================

A short run of the denoising actor with twin critics. The full-length
settings live in the bundled configs; this one takes about a minute.
"""

import numpy as np

from freshcontract import EnvConfig, is_feasible
from freshcontract.env import sample_state
from freshcontract.gdm import TrainConfig, infer, train

env = EnvConfig(r_bounds=(0.0, 2.0))
config = TrainConfig(episodes=60, steps_per_episode=100, batch_size=256, hidden=(64, 64),
                     actor_lr=1e-3, critic_lr=1e-3, eval_every=10, eval_states=100)


def report(record):
    if np.isfinite(record["eval_reward"]):
        print(f"episode {record['episode']:>3}: eval reward {record['eval_reward']:8.2f}, "
              f"feasible {record['feasible_rate']:.0%}")


# Early on the actor proposes rewards too small for IR and is penalized;
# it climbs into the feasible region over the first few thousand updates.
result = train(env, config, progress=report)

# Inference runs the denoising chain from pure noise for one state.
rng = np.random.default_rng(0)
state = sample_state(env, rng)
menu = infer(result.agent, state, env, rng)
print("deltas", np.round(state.deltas, 2))
print("menu f", np.round(menu.frequencies, 3), "R", np.round(menu.rewards, 3),
      "feasible", is_feasible(menu, state.population()))
