"""
Diffusion policy against PPO
============================

Both learners see the same market and the same training reward; the
comparison is on a shared set of held-out states.

The order depends on the budget. At this width PPO comes out ahead; with
the bundled paper_fig5.cfg (width 128) the diffusion policy wins on two of
three seeds.
"""

from freshcontract import EnvConfig
from freshcontract.gdm import TrainConfig, train
from freshcontract.ppo import PpoConfig, train_ppo

env = EnvConfig(r_bounds=(0.0, 2.0))
gdm = train(env, TrainConfig(episodes=60, batch_size=256, hidden=(64, 64), actor_lr=1e-3,
                             critic_lr=1e-3, eval_every=60, eval_states=100))
ppo = train_ppo(env, PpoConfig(episodes=60, rollout_length=2048, hidden=(64, 64),
                               eval_every=60, eval_states=100))

for name, result in (("diffusion", gdm), ("ppo", ppo)):
    last = result.metrics[-1]
    print(f"{name:>9}: eval reward {last['eval_reward']:8.2f}, "
          f"feasible {last['feasible_rate']:.0%}, {last['wall_clock']:.0f} s")
