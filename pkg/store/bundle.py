"""
Contêiner .msq: magic, versão, cabeçalho YAML legível e payload binário alinhado

Layout:
    b"MSQ1" | u32 versão | u32 tamanho do cabeçalho | cabeçalho YAML (utf-8)
    | preenchimento até 64 bytes | blobs little-endian, cada um alinhado em 64
"""

import hashlib
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import yaml

from config.settings import ArchitectureConfig, build_section
from models.network import MultiscaleNet, build_model
from utils.errors import BundleNotFoundError, ConfigError, FormatError, IntegrityError

logger = logging.getLogger(__name__)

MAGIC = b"MSQ1"
FORMAT_VERSION = 1
ALIGNMENT = 64
PREAMBLE = struct.Struct("<4sII")

DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
}


def _align(offset: int) -> int:
    return -(-offset // ALIGNMENT) * ALIGNMENT


def _plain(value: Any) -> Any:
    """Converte tuplas e escalares numpy para tipos YAML seguros"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _dtype_tag(array: np.ndarray) -> str:
    for tag, dtype in DTYPES.items():
        if array.dtype.newbyteorder("=") == dtype.newbyteorder("="):
            return tag
    raise FormatError(f"dtype {array.dtype} não suportado pelo contêiner")


def write_container(path: Union[str, Path], header: Dict[str, Any], arrays: Dict[str, np.ndarray],
                    checksum: bool = False) -> Path:
    """
    Grava um contêiner .msq

    Args:
        path: Destino
        header: Metadados (serializados em YAML)
        arrays: Tensores nomeados (float32 ou uint8)
        checksum: Inclui SHA-256 do payload no cabeçalho

    Returns:
        Caminho gravado
    """
    table: List[Dict[str, Any]] = []
    blobs: List[Tuple[int, bytes]] = []
    offset = 0
    for name, array in arrays.items():
        tag = _dtype_tag(array)
        data = np.ascontiguousarray(array, dtype=DTYPES[tag]).tobytes()
        offset = _align(offset)
        table.append({"name": name, "dtype": tag, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append((offset, data))
        offset += len(data)

    payload = bytearray(offset)
    for start, data in blobs:
        payload[start:start + len(data)] = data

    full_header = _plain(header)
    full_header["tensors"] = table
    full_header["payload_sha256"] = hashlib.sha256(payload).hexdigest() if checksum else None
    header_bytes = yaml.safe_dump(full_header, sort_keys=False).encode("utf-8")

    head = PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes
    head += b"\0" * (_align(len(head)) - len(head))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(head + bytes(payload))
    tmp.replace(path)
    logger.debug(f"Contêiner gravado em {path}: {len(table)} tensores, {len(payload)} bytes de payload")
    return path


def read_container(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Lê e valida um contêiner .msq

    Raises:
        BundleNotFoundError: arquivo inexistente
        FormatError: magic, versão ou cabeçalho inválidos (inclusive truncados)
        IntegrityError: payload truncado, tabela inconsistente ou checksum divergente
    """
    path = Path(path)
    if not path.is_file():
        raise BundleNotFoundError(f"bundle não encontrado: {path}")
    raw = path.read_bytes()

    if len(raw) < PREAMBLE.size:
        raise FormatError(f"{path}: arquivo menor que o preâmbulo")
    magic, version, header_len = PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: magic {magic!r} inválido")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: versão {version} não suportada")
    header_end = PREAMBLE.size + header_len
    if header_end > len(raw):
        raise FormatError(f"{path}: cabeçalho truncado")
    try:
        header = yaml.safe_load(raw[PREAMBLE.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise FormatError(f"{path}: cabeçalho ilegível: {e}") from e
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), list):
        raise FormatError(f"{path}: cabeçalho sem tabela de tensores")

    payload = memoryview(raw)[_align(header_end):]
    expected_sha = header.get("payload_sha256")
    if expected_sha and hashlib.sha256(payload).hexdigest() != expected_sha:
        raise IntegrityError(f"{path}: checksum do payload divergente")

    arrays: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        try:
            name, tag, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: entrada de tensor inválida {entry}") from e
        if tag not in DTYPES:
            raise FormatError(f"{path}: dtype '{tag}' desconhecido")
        dtype = DTYPES[tag]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise IntegrityError(f"{path}: '{name}' tem {nbytes} bytes para shape {shape}")
        if offset % ALIGNMENT or offset + nbytes > len(payload):
            raise IntegrityError(f"{path}: payload truncado em '{name}'")
        arrays[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
    return header, arrays


@dataclass
class ModelBundle:
    """W compartilhado + theta_k de cada candidato + metadados da arquitetura"""

    architecture: ArchitectureConfig
    candidates: Tuple[int, ...]
    tensors: Dict[str, torch.Tensor]
    mean: Tuple[float, ...] = field(default_factory=tuple)
    std: Tuple[float, ...] = field(default_factory=tuple)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MultiscaleNet, mean=(), std=(),
                   metadata: Optional[Dict[str, Any]] = None) -> "ModelBundle":
        tensors = {name: t.detach().clone().float() for name, t in model.state_dict().items()}
        return cls(model.arch, tuple(model.candidates), tensors,
                   tuple(float(m) for m in mean), tuple(float(s) for s in std), dict(metadata or {}))

    def build_model(self) -> MultiscaleNet:
        """Instancia a rede e carrega todos os tensores (strict)"""
        model = build_model(self.architecture, self.candidates)
        try:
            model.load_state_dict(self.tensors, strict=True)
        except RuntimeError as e:
            raise IntegrityError(f"tensores do bundle não correspondem à arquitetura: {e}") from e
        return model.eval()


def save(bundle: ModelBundle, path: Union[str, Path], checksum: bool = False) -> Path:
    header = {
        "materialized": False,
        "architecture": asdict(bundle.architecture),
        "candidates": list(bundle.candidates),
        "normalization": {"mean": list(bundle.mean), "std": list(bundle.std)},
        "metadata": bundle.metadata,
    }
    arrays = {name: t.detach().cpu().numpy() for name, t in bundle.tensors.items()}
    path = write_container(path, header, arrays, checksum=checksum)
    logger.info(f"Bundle salvo em {path} (K={list(bundle.candidates)})")
    return path


def load(path: Union[str, Path]) -> ModelBundle:
    """
    Carrega um ModelBundle treinado

    Raises:
        FormatError: contêiner inválido ou materializado
        IntegrityError: payload inconsistente
    """
    header, arrays = read_container(path)
    if header.get("materialized"):
        raise FormatError(f"{path}: contêiner materializado; use import_quantized")
    try:
        architecture = build_section(ArchitectureConfig, header["architecture"], "architecture")
        candidates = tuple(int(k) for k in header["candidates"])
        normalization = header.get("normalization") or {}
    except (KeyError, TypeError, ConfigError) as e:
        raise FormatError(f"{path}: metadados inválidos: {e}") from e
    if any(a.dtype != DTYPES["f32"] for a in arrays.values()):
        raise FormatError(f"{path}: bundle treinado deve conter apenas float32")

    return ModelBundle(
        architecture=architecture,
        candidates=candidates,
        tensors={name: torch.from_numpy(array) for name, array in arrays.items()},
        mean=tuple(normalization.get("mean") or ()),
        std=tuple(normalization.get("std") or ()),
        metadata=dict(header.get("metadata") or {}),
    )
