"""Event-driven STDP on one synapse: timing decides the sign of the change."""

import numpy as np

from cortex_sim.plasticity import StdpParams, run_pair

p = StdpParams()
w0 = 80.0

for lag in (-20.0, -5.0, -1.0, 1.0, 5.0, 20.0):
    # 50 pairings, post follows pre by `lag` ms
    pre = np.arange(50) * 200.0 + 100.0
    post = pre + lag
    w = run_pair(pre, post, w0, p)
    print(f"post - pre = {lag:+5.1f} ms  ->  w {w0:.1f} -> {w:.3f}")

# uncorrelated trains drift toward the weight where both updates balance
w_star = p.w_ref * p.alpha ** (-1.0 / (1.0 - p.mu))
print(f"balance point {w_star:.0f}")
rng = np.random.default_rng(0)
pre = np.sort(rng.uniform(0, 100_000, 1000))
post = np.sort(rng.uniform(0, 100_000, 1000))
for w0 in (20.0, 80.0, 150.0):
    print(f"random pairing from w={w0:.0f}: {run_pair(pre, post, w0, p):.3f}")
