"""Weakly supervised segmentation from image labels: a general learning stage
trains a CAM classifier, specific learning stages retrain it against its own
refined, bounded activation maps."""

from .estimator import GSLMSegmenter

__all__ = ["GSLMSegmenter"]
__version__ = "0.1.0"
