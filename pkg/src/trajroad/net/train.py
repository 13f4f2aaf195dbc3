"""Mini-batch training with BCE and Adam, plus batched inference."""
import logging
import time

import numpy as np

from ..dataset import expand_with_augmentation, to_batch
from ..errors import EmptyDataset
from ..tensor import Tensor, adam_step, backward, bce_loss, no_grad
from .model import forward

log = logging.getLogger(__name__)


def train(dataset, params, config, epochs=30, batch=4, lr=2e-4, seed=0, augment=True, callback=None):
    """Train ``params`` in place; returns (params, per-epoch mean losses).

    With ``augment`` the seven augmented variants of every sample join the
    originals before training.  Shuffling and crops draw from ``seed``.
    """
    if not dataset:
        raise EmptyDataset("training needs at least one sample")
    items = expand_with_augmentation(dataset, seed) if augment else list(dataset)
    image, heat, mask = to_batch(items)
    dtype = params.parameters()[0].tensor.dtype
    image, heat, mask = image.astype(dtype), heat.astype(dtype), mask.astype(dtype)
    rng = np.random.default_rng(seed + 1)
    plist = params.parameters()
    step = 0
    losses = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            params.zero_grad()
            pred = forward(Tensor(image[idx]), Tensor(heat[idx]), params, config)
            loss = bce_loss(pred, mask[idx])
            backward(loss)
            step += 1
            adam_step(plist, t=step, lr=lr)
            total += float(loss.data) * len(idx)
        losses.append(total / len(items))
        log.info("epoch %d/%d loss %.5f (%.1fs)", epoch + 1, epochs, losses[-1], time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, losses[-1])
    return params, losses


def predict(params, config, triplets, batch=8):
    """Probability maps, N x H x W, for a list of triplets."""
    dtype = params.parameters()[0].tensor.dtype
    outs = []
    with no_grad():
        for start in range(0, len(triplets), batch):
            image, heat, _ = to_batch(triplets[start:start + batch])
            m = forward(Tensor(image.astype(dtype)), Tensor(heat.astype(dtype)), params, config)
            outs.append(m.data[:, 0])
    return np.concatenate(outs) if outs else np.zeros((0, config.input_size, config.input_size), np.float32)
