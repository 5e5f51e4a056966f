"""
Tarefa sintética determinística: blobs gaussianos condicionados à classe
"""

import logging
from typing import Sequence

import numpy as np

from ingest.dataset import Dataset
from utils.errors import DataError

logger = logging.getLogger(__name__)

# Distância entre protótipos e ruído, na escala de pixels
PROTOTYPE_SCALE = 60.0
NOISE_SCALE = 12.0
BASE_LEVEL = 128.0


def synthetic_task(seed: int, n: int, num_classes: int,
                   shape: Sequence[int] = (1, 16, 16), split: str = "train") -> Dataset:
    """
    Gera n imagens u8, classes balanceadas em ordem cíclica

    Cada classe tem um protótipo gaussiano suave; as amostras são o protótipo
    mais ruído pequeno, o que torna a tarefa linearmente separável. Os
    protótipos dependem apenas da semente, então treino e teste gerados
    com a mesma semente e splits diferentes compartilham as classes.

    Args:
        seed: Semente
        n: Número de itens (>= num_classes)
        num_classes: Número de classes
        shape: (C, H, W)
        split: "train" ou "test" (muda apenas o ruído)
    """
    if n < num_classes:
        raise DataError(f"n={n} menor que num_classes={num_classes}")
    shape = tuple(int(s) for s in shape)

    proto_rng = np.random.default_rng(seed)
    prototypes = proto_rng.normal(0.0, PROTOTYPE_SCALE, size=(num_classes,) + shape)

    noise_rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(n, dtype=np.int64) % num_classes
    noise = noise_rng.normal(0.0, NOISE_SCALE, size=(n,) + shape)
    images = np.clip(np.rint(BASE_LEVEL + prototypes[labels] + noise), 0, 255).astype(np.uint8)

    logger.debug(f"Tarefa sintética: seed={seed}, n={n}, classes={num_classes}, shape={shape}")
    return Dataset(images, labels, split, num_classes)
