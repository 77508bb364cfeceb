from .classifier import (
    ClassifierModel,
    apply_dropout,
    classifier_forward,
    classifier_forward_batch,
    label_target,
    softmax_cross_entropy,
    softmax_cross_entropy_soft,
)
from .optimizer import AdamState, accumulate_gradients, adam_step, clip_gradients, global_norm, optimizer_update
from .trainer import EpochMetrics, TrainingExample, TrainingResult, accuracy, train_stage1, train_stage2

__all__ = [
    "AdamState",
    "ClassifierModel",
    "EpochMetrics",
    "TrainingExample",
    "TrainingResult",
    "accumulate_gradients",
    "accuracy",
    "adam_step",
    "apply_dropout",
    "classifier_forward",
    "classifier_forward_batch",
    "clip_gradients",
    "global_norm",
    "label_target",
    "optimizer_update",
    "softmax_cross_entropy",
    "softmax_cross_entropy_soft",
    "train_stage1",
    "train_stage2",
]
