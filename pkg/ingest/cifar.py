"""
Leitor do CIFAR-10 no formato binário (registros de 3073 bytes)
"""

import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from ingest.dataset import Dataset
from utils.errors import DataError, IntegrityError

logger = logging.getLogger(__name__)

RECORD_BYTES = 3073
RECORDS_PER_BATCH = 10000
BATCH_BYTES = RECORD_BYTES * RECORDS_PER_BATCH
IMAGE_SHAPE = (3, 32, 32)

TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_BATCH = "test_batch.bin"


def parse_records(raw: bytes, name: str, expected_records: int = RECORDS_PER_BATCH):
    """
    Converte um buffer de registros (1 byte de rótulo + 3072 de pixels)

    Returns:
        (imagens (N, 3, 32, 32) uint8, rótulos (N,) int64)
    """
    if len(raw) != expected_records * RECORD_BYTES:
        raise IntegrityError(
            f"{name}: {len(raw)} bytes, esperado {expected_records * RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(expected_records, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) >= 10:
        raise IntegrityError(f"{name}: rótulo fora de [0, 10)")
    images = records[:, 1:].reshape(expected_records, *IMAGE_SHAPE).copy()
    return images, labels


def _resolve_dir(directory: Path) -> Path:
    # O tarball oficial extrai para cifar-10-batches-bin/
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def _read_batches(directory: Path, names: List[str], split: str) -> Dataset:
    missing = [name for name in names if not (directory / name).exists()]
    if missing:
        raise IntegrityError(f"CIFAR-10 incompleto em {directory}: faltam {missing}")
    images, labels = [], []
    for name in names:
        batch_images, batch_labels = parse_records((directory / name).read_bytes(), name)
        images.append(batch_images)
        labels.append(batch_labels)
    return Dataset(np.concatenate(images), np.concatenate(labels), split, 10)


def load_cifar10(directory: Union[str, Path], split: str = "train") -> Dataset:
    """
    Carrega o split pedido do CIFAR-10

    Raises:
        DataError: diretório ausente
        IntegrityError: lote faltando ou com tamanho incorreto
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"diretório do CIFAR-10 não encontrado: {directory}")
    directory = _resolve_dir(directory)
    names = TRAIN_BATCHES if split == "train" else [TEST_BATCH]
    dataset = _read_batches(directory, names, split)
    logger.info(f"CIFAR-10 carregado ({split}): {dataset.images.shape}")
    return dataset
