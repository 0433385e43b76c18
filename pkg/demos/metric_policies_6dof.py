"""Compare continuous-only and alternating surrogate metrics on the 6-DoF space.

Runs a few repeats of each policy on shared seeds and prints the first-hit
evaluation of each failure mode.

    python demos/metric_policies_6dof.py [n_repeats]
"""

import sys

from critscen.campaign import BOTH, CampaignConfig, run_repeats
from critscen.scenario import highway_6dof

n = int(sys.argv[1]) if len(sys.argv) > 1 else 3
for policy in ("continuous", "alternating"):
    cfg = CampaignConfig(highway_6dof(), max_iters=600, metric_policy=policy, n_repeats=n)
    _, summary = run_repeats(cfg)
    print(policy)
    for mode, hits in summary["first_hits"].items():
        st = summary["stats"][mode]
        label = "both" if mode == BOTH else mode
        print(f"  {label:20s} hits {hits}  median {st['median']}")
