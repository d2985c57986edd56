# Noise schedule, denoisers and denoiser training
from .schedule import NoiseSchedule, default_schedule, make_linear_schedule
