"""Slot perception: circle detection, crop classification, target selection."""

from ..geometry import pixel_to_world, world_to_pixel
from .cnn import (CnnWeights, TrainingDiverged, forward, init_weights,
                  load_weights, loss_and_grads, predict, save_weights,
                  train_cnn)
from .hough import Candidate, ChtParams, cht_params_for, detect_circles
from .pipeline import (Label, NoValidSlotError, ScoredCandidate,
                       accepted_rack_candidates, extract_crop,
                       generate_labeled_dataset, label_candidate,
                       refined_camera_z, score_candidates, select_target,
                       train_discriminator)

__all__ = [
    "Candidate",
    "ChtParams",
    "CnnWeights",
    "Label",
    "NoValidSlotError",
    "ScoredCandidate",
    "TrainingDiverged",
    "accepted_rack_candidates",
    "cht_params_for",
    "detect_circles",
    "extract_crop",
    "forward",
    "generate_labeled_dataset",
    "init_weights",
    "label_candidate",
    "load_weights",
    "loss_and_grads",
    "pixel_to_world",
    "predict",
    "refined_camera_z",
    "save_weights",
    "score_candidates",
    "select_target",
    "train_cnn",
    "train_discriminator",
    "world_to_pixel",
]
