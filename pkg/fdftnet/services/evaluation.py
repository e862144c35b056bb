import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List

import numpy as np

from ..core.tensor import Tensor, no_grad
from ..layers.module import Module

log = logging.getLogger(__name__)

DEFAULT_EVAL_BATCH = 32


def _score_shard(model: Module, images: np.ndarray, batch_size: int) -> np.ndarray:
    out: List[np.ndarray] = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out.append(model(Tensor(images[start:start + batch_size])).data.reshape(-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def predict(model: Module, images: np.ndarray, batch_size: int = DEFAULT_EVAL_BATCH, workers: int = 1) -> np.ndarray:
    """Fake-probabilities for ``images`` in infer mode, sharded across ``workers`` threads.

    Infer-mode forward passes only read parameters, so the shards share one model.
    """
    model.set_mode("infer")
    if workers <= 1 or len(images) <= batch_size:
        return _score_shard(model, images, batch_size)
    shards = np.array_split(np.arange(len(images)), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda idx: _score_shard(model, images[idx], batch_size), shards))
    log.debug("scored %d images on %d threads", len(images), workers)
    return np.concatenate(parts)
