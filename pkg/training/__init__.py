"""Losses, optimizers and the pretraining / training loops."""

from training.losses import LossError, SmoothedLabels, batch_loss, fragment_loss, smooth_labels, triplet_loss
from training.optimizers import Adam, AdamState, PlateauScheduler, adam_step
from training.trainer import TrainConfig, TrainingError, TrainResult, pretrain_wi, train

__all__ = ['Adam', 'AdamState', 'LossError', 'PlateauScheduler', 'SmoothedLabels', 'TrainConfig', 'TrainResult',
           'TrainingError', 'adam_step', 'batch_loss', 'fragment_loss', 'pretrain_wi', 'smooth_labels', 'train',
           'triplet_loss']
