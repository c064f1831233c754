"""
Forward noising and one denoiser step
=====================================

Noise a batch of spectrogram frames, predict the noise, recover the clean
estimate and take a single SGD step.
"""

import numpy as np

from stagediff import autodiff as ad
from stagediff.denoiser import denoise, init_params
from stagediff.diffusion import diffusion_loss, forward_noise, make_schedule, x0_from_eps
from stagediff.harness import gen_dataset

sched = make_schedule(T=100, beta_min=1e-4, beta_max=0.02)
print("alpha_bar at t=0, 25, 50, 99:", sched.alpha_bar[[0, 25, 50, 99]].round(4))

data = gen_dataset("class_cond", seed=0, n=16)
x0, cond = data.rows(np.arange(4))          # (4 * 32 frames, 16 bins)
rng = np.random.default_rng(1)
t = np.repeat(rng.integers(0, 100, 4), 32)  # one timestep per spectrogram
eps = rng.standard_normal(x0.shape)
z_t = forward_noise(x0, t, eps, sched)

params = init_params(seed=0, d=64, d_in=16, L_b=8, C=8, d_ssl=16)
print("trainable parameters:", params.n_params)

loss = diffusion_loss(denoise(z_t, t, cond, None, params), eps)
ad.backward(loss)
print("initial loss:", round(loss.item(), 4))

# The residual scales start at zero, so only they move the blocks on step one.
print("grad of block-0 scale:", float(params.blocks[0].scale.grad))
for p in params.tensors():
    p.data = p.data - 0.1 * p.grad
    p.zero_grad()

# With the true noise the clean signal comes back exactly.
print("reconstruction error with true eps:",
      float(np.abs(x0_from_eps(z_t, eps, t, sched) - x0).max()))
