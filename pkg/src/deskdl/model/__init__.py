"""Autodiff executor, mini segmentation network, loss, metrics and synthetic data."""

from .checkpoint import load_checkpoint, save_checkpoint
from .loss import ClassWeights, uniform_weights, weighted_ce_loss
from .metrics import iou, iou_all, pixel_accuracy
from .net import MiniDenseNet, NetConfig, first_nonfinite
from .synthetic import (SceneConfig, SyntheticScene, aggregate_frequencies,
                        gen_dataset, load_dataset, make_scene, read_scene,
                        save_dataset, write_scene)

__all__ = [
    "ClassWeights", "MiniDenseNet", "NetConfig", "SceneConfig",
    "SyntheticScene", "aggregate_frequencies", "first_nonfinite",
    "gen_dataset", "iou", "iou_all", "load_checkpoint", "load_dataset",
    "make_scene", "pixel_accuracy", "read_scene", "save_checkpoint",
    "save_dataset", "uniform_weights", "weighted_ce_loss", "write_scene",
]
