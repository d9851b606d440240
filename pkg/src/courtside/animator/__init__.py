"""Masked diffusion over game-state sequences: schedule, model, samplers, training."""

from .model import (
    AnimationModel,
    TemporalModelConfig,
    estimate_noise,
    init_temporal_model,
)
from .samplers import (
    ConditioningBundle,
    autoregressive_extend,
    ddim_grid,
    ddim_step,
    ddpm_step,
    sample,
    sample_many,
    upsample_framerate,
)
from .schedule import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_K,
    FULL_BETA_END,
    FULL_K,
    NoiseSchedule,
    build_schedule,
    forward_sample,
)
from .train import (
    EpisodeData,
    TrainConfig,
    TrainingExample,
    compute_normalization,
    draw_example,
    masked_noise_loss,
    train,
    training_step,
)

__all__ = [
    "AnimationModel",
    "ConditioningBundle",
    "DEFAULT_BETA_END",
    "DEFAULT_BETA_START",
    "DEFAULT_K",
    "EpisodeData",
    "FULL_BETA_END",
    "FULL_K",
    "NoiseSchedule",
    "TemporalModelConfig",
    "TrainConfig",
    "TrainingExample",
    "autoregressive_extend",
    "build_schedule",
    "compute_normalization",
    "ddim_grid",
    "ddim_step",
    "ddpm_step",
    "draw_example",
    "estimate_noise",
    "forward_sample",
    "init_temporal_model",
    "masked_noise_loss",
    "sample",
    "sample_many",
    "train",
    "training_step",
    "upsample_framerate",
]
