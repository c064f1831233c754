"""
Decaying guidance and stage-aware timesteps
===========================================

The guidance mask thins out linearly and vanishes at rho_ssl * K_tot; the
timestep law moves its mode according to g.
"""

import numpy as np

from stagediff.guidance import GuidanceSchedule, gamma, make_mask
from stagediff.sampler import SamplerState, beta_shapes, mode_from_progress

sched = GuidanceSchedule(rho_ssl=0.6, K_tot=5000)
for k in (0, 750, 1500, 2250, 3000, 4000):
    gk = gamma(k, sched)
    M = make_mask(16, 32, gk, master_seed=0, k=k)
    print(f"k={k:>4}  gamma={gk:.3f}  active fraction={M.mean():.3f}")

# Fast progress (g > 0) favours small noise levels, stalls favour large ones.
for g in (-2.0, 0.0, 2.0):
    mu = mode_from_progress(g, s_scale=1.0)
    a, b = beta_shapes(mu, nu=6.0)
    print(f"g={g:+.1f}  mode={mu:.3f}  Beta({a:.2f}, {b:.2f})")

state = SamplerState(T=100, nu=6.0)
rng = np.random.default_rng(0)
print("before any g, mean t:", state.sample(rng, 10_000).mean().round(1))
state.update(0.5)   # first value also fixes the scale
state.update(1.5)
print("after g=1.5 (scale 0.5), mean t:", state.sample(rng, 10_000).mean().round(1))
