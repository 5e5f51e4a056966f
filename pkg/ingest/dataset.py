"""
Estrutura comum de dataset e normalização
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Imagens u8 (N, C, H, W), rótulos inteiros e constantes de normalização"""

    images: np.ndarray
    labels: np.ndarray
    split: str
    num_classes: int
    mean: Tuple[float, ...] = field(default_factory=tuple)
    std: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"imagens devem ser (N, C, H, W), recebeu {self.images.shape}")
        if self.images.dtype != np.uint8:
            raise DataError(f"imagens devem ser uint8, recebeu {self.images.dtype}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} imagens para {len(self.labels)} rótulos")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"rótulos fora de [0, {self.num_classes})")
        if not self.mean:
            self.mean, self.std = channel_stats(self.images)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, n: Optional[int]) -> "Dataset":
        """Primeiros n itens, mantendo as constantes de normalização"""
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.split, self.num_classes,
                       self.mean, self.std)

    def with_stats(self, mean: Tuple[float, ...], std: Tuple[float, ...]) -> "Dataset":
        return Dataset(self.images, self.labels, self.split, self.num_classes, tuple(mean), tuple(std))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.images.tobytes())
        digest.update(self.labels.tobytes())
        return digest.hexdigest()


def channel_stats(images: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """Média e desvio por canal na escala de pixels [0, 255]"""
    if len(images) == 0:
        channels = images.shape[1]
        return (0.0,) * channels, (1.0,) * channels
    pixels = images.astype(np.float64)
    mean = pixels.mean(axis=(0, 2, 3))
    std = pixels.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return tuple(float(m) for m in mean), tuple(float(s) for s in std)


def normalize(images: np.ndarray, mean: Tuple[float, ...], std: Tuple[float, ...],
              dtype=np.float32) -> np.ndarray:
    """(raw - mean) / std por canal"""
    mean_arr = np.asarray(mean, dtype=dtype).reshape(1, -1, 1, 1)
    std_arr = np.asarray(std, dtype=dtype).reshape(1, -1, 1, 1)
    return (images.astype(dtype) - mean_arr) / std_arr


def denormalize(values: np.ndarray, mean: Tuple[float, ...], std: Tuple[float, ...]) -> np.ndarray:
    """Inversa de normalize, de volta à escala de pixels em float"""
    mean_arr = np.asarray(mean, dtype=values.dtype).reshape(1, -1, 1, 1)
    std_arr = np.asarray(std, dtype=values.dtype).reshape(1, -1, 1, 1)
    return values * std_arr + mean_arr
