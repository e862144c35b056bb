import logging
from typing import Union

import numpy as np

from ..core.tensor import Tensor
from ..models.schemas import CutoutConfig

log = logging.getLogger(__name__)

ImageLike = Union[np.ndarray, Tensor]


def cutout(image: ImageLike, cfg: CutoutConfig, rng: np.random.Generator) -> ImageLike:
    """Zero ``cfg.alpha`` square masks across all channels of a [C,H,W] image.

    Each mask has side ``base_mask * u`` with u uniform in 1..beta; its top-left
    corner is uniform over every position where the mask still covers at
    least one pixel, and the overhang is clipped.
    """
    as_tensor = isinstance(image, Tensor)
    out = np.array(image.data if as_tensor else image, copy=True)
    if cfg.enabled:
        height, width = out.shape[-2:]
        for _ in range(cfg.alpha):
            side = cfg.base_mask * int(rng.integers(1, cfg.beta + 1))
            top = int(rng.integers(-(side - 1), height))
            left = int(rng.integers(-(side - 1), width))
            out[..., max(top, 0):max(top + side, 0), max(left, 0):max(left + side, 0)] = 0
    return Tensor(out) if as_tensor else out


def augment_batch(batch: ImageLike, cfg: CutoutConfig, rng: np.random.Generator) -> ImageLike:
    """Cutout applied independently per image, each with its own child stream of ``rng``."""
    as_tensor = isinstance(batch, Tensor)
    data = batch.data if as_tensor else np.asarray(batch)
    if not cfg.enabled:
        out = data.copy()
    else:
        streams = rng.spawn(len(data))
        out = np.stack([cutout(img, cfg, s) for img, s in zip(data, streams)]) if len(data) else data.copy()
    return Tensor(out) if as_tensor else out
