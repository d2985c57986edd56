# Forward diffusion plus reverse denoising with per-row levels
from .purify import PurifierConfig, PurifyTrace, purify, purify_shared
