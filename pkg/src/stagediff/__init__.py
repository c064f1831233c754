"""Stage-aware diffusion training at desk scale."""
from . import autodiff, denoiser, diffusion, guidance, monitor, sampler, structure

__version__ = "0.1.0"
