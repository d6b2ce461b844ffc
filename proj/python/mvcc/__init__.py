"""Semi-supervised segmentation with multi-view correlation consistency."""

from ._core import (
    ConfigError,
    compose,
    consistency_loss,
    correlation_consistency,
    generate_dataset,
    info_nce,
    invert,
    miou,
    sample_pixels,
    train,
    warp,
)

__all__ = [
    "ConfigError",
    "compose",
    "consistency_loss",
    "correlation_consistency",
    "generate_dataset",
    "info_nce",
    "invert",
    "miou",
    "sample_pixels",
    "train",
    "warp",
]
