"""Train the policy controller on a toy reward and compare it with random search.

The reward is the share of the ten slots whose operation is TranslateX, so the
best policy is known and progress is easy to read.

Run: python3 demos/policy_search.py [iterations]
"""
import sys

import numpy as np

from afpnkit.search import SyntheticReward, search, search_space_size

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 150
reward = SyntheticReward("TranslateX")
print(f"search space: {search_space_size(15, 11, 10, 5):.3e} policies")

ppo = search(reward, iters, "ppo", seed=0)
rand = search(reward, iters * 8, "random", seed=0)

batches = np.array([r for _, r in ppo.history]).reshape(iters, 8).mean(axis=1)
for it in range(0, iters, max(1, iters // 10)):
    print(f"iter {it:4d}  mean batch reward {batches[it]:.3f}  " + "#" * int(40 * batches[it]))
print(f"\nppo best {ppo.best_reward:.2f} after {len(ppo.history)} evaluations")
print(f"random best {rand.best_reward:.2f} after {len(rand.history)} evaluations")
print("greedy controller policy:")
for sub in ppo.greedy_policy.subs:
    print("  ", [(op.kind, op.prob_level, op.mag_level) for op in sub.ops])
