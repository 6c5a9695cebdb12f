"""Settings, run configuration, checkpoints, the experiment controller and the ablation runner."""

from harness.checkpoint import Checkpoint, CheckpointError, load_checkpoint, load_model, save_checkpoint
from harness.controller import ExperimentController
from harness.run_config import RunConfig, RunConfigError
from harness.settings import Settings, configure_logging

__all__ = ['Checkpoint', 'CheckpointError', 'ExperimentController', 'RunConfig', 'RunConfigError', 'Settings',
           'configure_logging', 'load_checkpoint', 'load_model', 'save_checkpoint']
