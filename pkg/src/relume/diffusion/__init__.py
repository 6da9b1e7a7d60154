from .schedule import (
    DiffusionError,
    NoiseSchedule,
    make_schedule,
    scaled_schedule,
    q_sample,
    training_loss,
    ddim_timesteps,
    ddim_sample,
    seed_noise,
)
from .model import DenoiserSpec, Denoiser, timestep_embedding
from .lora import LowRankAdapter, AdaptedDenoiser, apply_adapter, default_targets
from .control import ControlBranch, control_forward, zero_conv
from .checkpoint import (
    save_checkpoint,
    load_checkpoint,
    load_into,
    state_arrays,
    file_sha256,
    schedule_meta,
    schedule_from_meta,
)
