"""
Leitor do formato IDX (MNIST)
"""

import gzip
import logging
from pathlib import Path
from typing import Union

import numpy as np

from ingest.dataset import Dataset
from utils.errors import DataError, FormatError, IntegrityError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if not gz.exists():
            raise DataError(f"arquivo não encontrado: {path}")
        path = gz
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx(raw: bytes, expected_magic: int, name: str) -> np.ndarray:
    """
    Interpreta um buffer IDX big-endian

    Args:
        raw: Conteúdo do arquivo
        expected_magic: 0x803 (imagens) ou 0x801 (rótulos)
        name: Nome para mensagens de erro

    Returns:
        Array uint8 com o shape declarado no cabeçalho
    """
    if len(raw) < 8:
        raise IntegrityError(f"{name}: cabeçalho IDX truncado")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise FormatError(f"{name}: magic 0x{magic:08x}, esperado 0x{expected_magic:08x}")

    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IntegrityError(f"{name}: cabeçalho IDX truncado")
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4).astype(np.int64)
    expected = int(np.prod(dims))
    payload = len(raw) - header
    if payload != expected:
        raise IntegrityError(f"{name}: {payload} bytes de dados, esperado {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(tuple(dims))


def load_idx(path_images: Union[str, Path], path_labels: Union[str, Path],
             split: str = "train", num_classes: int = 10) -> Dataset:
    """
    Carrega um par imagens/rótulos IDX

    Raises:
        FormatError: magic incorreto
        IntegrityError: arquivo truncado ou contagens divergentes
        DataError: arquivo ausente
    """
    images = parse_idx(_read_bytes(path_images), IMAGES_MAGIC, str(path_images))
    labels = parse_idx(_read_bytes(path_labels), LABELS_MAGIC, str(path_labels))
    if images.shape[0] != labels.shape[0]:
        raise IntegrityError(f"{images.shape[0]} imagens e {labels.shape[0]} rótulos")

    images = images.reshape(images.shape[0], 1, images.shape[1], images.shape[2]).copy()
    logger.info(f"IDX carregado ({split}): {images.shape}")
    return Dataset(images, labels.astype(np.int64), split, num_classes)


def load_mnist(directory: Union[str, Path], split: str = "train") -> Dataset:
    if split not in MNIST_FILES:
        raise ValueError(f"split desconhecido: {split}")
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"diretório do MNIST não encontrado: {directory}")
    images_name, labels_name = MNIST_FILES[split]
    return load_idx(directory / images_name, directory / labels_name, split)
