"""
Batches normalizados com embaralhamento e augmentation determinísticos
"""

import logging
from typing import Iterator, Optional, Tuple

import numpy as np
import torch

from ingest.dataset import Dataset, normalize

logger = logging.getLogger(__name__)

CROP_PAD = 4


def _augment(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Pad de 4 com zeros + recorte aleatório e flip horizontal (valores já normalizados)"""
    n, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD)))
    offsets = rng.integers(0, 2 * CROP_PAD + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = np.empty_like(batch)
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def batches(dataset: Dataset, batch_size: int, shuffle_seed: Optional[int] = None,
            augment: bool = False) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
    """
    Itera sobre o dataset em batches

    Args:
        dataset: Dataset u8
        batch_size: Tamanho do batch (o último pode ser menor)
        shuffle_seed: Semente do embaralhamento; None mantém a ordem original
        augment: Pad-4 + recorte e flip (usado apenas para CIFAR)

    Yields:
        (imagens float32 normalizadas, rótulos int64)
    """
    if batch_size < 1:
        raise ValueError("batch_size deve ser >= 1")
    n = len(dataset)
    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(n) if shuffle_seed is not None else np.arange(n)

    for start in range(0, n, batch_size):
        index = order[start:start + batch_size]
        images = normalize(dataset.images[index], dataset.mean, dataset.std)
        if augment:
            images = _augment(images, rng)
        yield torch.from_numpy(np.ascontiguousarray(images)), torch.from_numpy(dataset.labels[index])


def num_batches(dataset: Dataset, batch_size: int) -> int:
    return -(-len(dataset) // batch_size)
