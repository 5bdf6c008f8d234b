from dentlab.nn.layers import (
    BatchNormState,
    DegenerateVarianceException,
    Granularity,
    StatsMode,
    batchnorm_forward,
)
from dentlab.nn.models import Model, UnknownArchitectureException, build_model, theta_checksum
from dentlab.nn.smoothing import InvalidSmoothingException, SmoothingParams, gaussian_smooth
from dentlab.nn.checkpoint import CheckpointFormatException, load_checkpoint, save_checkpoint
