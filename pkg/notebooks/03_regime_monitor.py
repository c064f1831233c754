"""
The semantic-progress signal
============================

Score reconstructions in a frozen feature space and turn a window of scores
into a progress value g (the negative local slope).
"""

import numpy as np

from stagediff.harness import gen_dataset
from stagediff.monitor import RegimeWindow, SslEncoder, smoothing_views, ssl_discrepancy

enc = SslEncoder.from_seed(7, F=16, d_h=32, d_ssl=16)
data = gen_dataset("class_cond", seed=0, n=8)
x = data.x

# Three views: the input and two blurred copies at factors 2 and 4.
views = smoothing_views(x[0])
print("view energies:", [round(float(np.sum(v * v)), 1) for v in views])

rng = np.random.default_rng(0)
for sigma in (1.0, 0.3, 0.1, 0.0):
    noisy = x + sigma * rng.standard_normal(x.shape)
    print(f"noise {sigma:>4}: discrepancy {ssl_discrepancy(noisy, x, enc):.4f}")

# A falling discrepancy gives positive g once the window is full.
window = RegimeWindow(capacity=5, interval=50)
for k, value in zip(range(50, 400, 50), [0.30, 0.26, 0.23, 0.21, 0.20, 0.195, 0.193]):
    g = window.observe(k, value)
    print(f"step {k}: g = {g}")
