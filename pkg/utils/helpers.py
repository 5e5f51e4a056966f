"""
Funções utilitárias para o Multiscale Quantizer
"""

import hashlib
import logging
import random
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Union

import numpy as np
import pandas as pd
import torch
import yaml

from config.settings import AppConfig

logger = logging.getLogger(__name__)


def set_global_seed(seed: int):
    """
    Fixa as sementes de todos os geradores usados no projeto

    Args:
        seed: Semente inteira
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def tensors_hash(tensors: Mapping[str, torch.Tensor]) -> str:
    """
    Hash SHA-256 estável de um conjunto nomeado de tensores

    Args:
        tensors: Mapeamento nome -> tensor (ex.: state_dict)

    Returns:
        Hex digest sobre nomes, shapes e bytes
    """
    digest = hashlib.sha256()
    for name in sorted(tensors):
        value = tensors[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tuple(value.shape)).encode("utf-8"))
        digest.update(value.numpy().tobytes())
    return digest.hexdigest()


def module_hash(module: torch.nn.Module) -> str:
    """Hash de todos os parâmetros e buffers de um módulo"""
    return tensors_hash(module.state_dict())


class Timer:
    """Cronômetro de parede (context manager)"""

    def __init__(self):
        self.start = 0.0
        self.elapsed = 0.0

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def write_csv(rows: List[Dict[str, Any]], path: Union[str, Path], schema: str) -> pd.DataFrame:
    """
    Grava linhas em CSV seguindo um esquema versionado de AppConfig.CSV_SCHEMAS

    Args:
        rows: Lista de dicionários (uma linha cada)
        path: Destino
        schema: Nome do esquema

    Returns:
        DataFrame gravado
    """
    if schema not in AppConfig.CSV_SCHEMAS:
        raise KeyError(f"esquema CSV desconhecido: {schema}")
    _, columns = AppConfig.CSV_SCHEMAS[schema]

    df = pd.DataFrame(rows, columns=columns)
    missing = [col for col in columns if col not in df.columns]
    if missing:
        raise KeyError(f"colunas faltando para '{schema}': {missing}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.debug(f"CSV '{schema}' gravado em {path} ({len(df)} linhas)")
    return df


def write_manifest(output_dir: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """Grava manifest.yaml com configuração resolvida e versões de esquema"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "app": AppConfig.APP_NAME,
        "version": AppConfig.VERSION,
        "csv_schemas": {name: version for name, (version, _) in AppConfig.CSV_SCHEMAS.items()},
    }
    manifest.update(payload)
    path = output_dir / AppConfig.ARTIFACTS["manifest"]
    path.write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    return path


def nearest_candidate(bits: int, candidates: Iterable[int]) -> int:
    """
    Candidato treinado mais próximo de um bit-width arbitrário

    Empates resolvem para o candidato de maior precisão.
    """
    options = sorted(candidates, reverse=True)
    if not options:
        raise ValueError("conjunto de candidatos vazio")
    return min(options, key=lambda k: (abs(k - bits), -k))
