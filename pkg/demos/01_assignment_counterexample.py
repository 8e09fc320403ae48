"""Why the squared cost? A two-agent instance where the linear-cost matching
sends agents on crossing paths of very different lengths, while the
squared-cost (CAPT) matching equalizes the legs and arrives simultaneously.

Run: python3 demos/01_assignment_counterexample.py
"""

import numpy as np

from swarmplan.assignment import capt_assignment, lsap_assignment

agents = np.array([[0.0, 0.0], [0.0, -3.0]])
goals = np.array([[1.0, 0.0], [3.0, 1.0]])

dist = np.linalg.norm(agents[:, None] - goals[None, :], axis=-1)
print("distance matrix:")
print(np.round(dist, 4))

lsap = lsap_assignment(agents, goals)
capt = capt_assignment(agents, goals)

print(f"\nlinear-cost matching : agent i -> goal {lsap.goal_of.tolist()}, "
      f"total distance {lsap.total_cost:.4f}")
print(f"squared-cost matching: agent i -> goal {capt.goal_of.tolist()}, "
      f"total squared {capt.total_cost:.4f}")

for name, a in [("linear", lsap), ("squared", capt)]:
    legs = [dist[i, a.goal_of[i]] for i in range(2)]
    print(f"{name:8s} legs: {np.round(legs, 4).tolist()}  "
          f"(longest {max(legs):.4f})")

print("\nThe squared cost trades a slightly larger total distance for a much "
      "smaller longest leg, which is what makes simultaneous arrival at a "
      "common speed limit possible.")
