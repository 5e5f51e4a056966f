"""
Hot-swap: ModelBundle -> DWT -> escala -> IDWT -> quantização -> modelo de bit-width fixo
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from config.settings import ArchitectureConfig, build_section
from core.tensor import conv2d, matmul, relu
from models.layers import SHARED_KEY, apply_affine, fold_batch_norm
from models.network import STEM_KERNEL, stage_geometry
from quant import packed
from quant.quantizers import act_codes, weight_codes
from quant.wavelet import dwt2, get_filter_bank, idwt2, scale_subbands
from store.bundle import ModelBundle, load, read_container, write_container
from utils.errors import CandidateError, ConfigError, ContractError, FormatError, IntegrityError
from utils.helpers import Timer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantizedWeight:
    """Pesos W_k como códigos inteiros + passo real"""

    codes: torch.Tensor      # int8
    step: torch.Tensor       # float32 0-d
    bits: int

    def dequantize(self) -> torch.Tensor:
        return self.codes.to(torch.float32) * self.step


@dataclass(frozen=True)
class FoldedBN:
    """BN do banco k como afim por canal"""

    scale: torch.Tensor
    shift: torch.Tensor

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return apply_affine(x, self.scale, self.shift)


@dataclass(frozen=True)
class MaterializedConv:
    bn: FoldedBN
    clip: torch.Tensor
    weight: QuantizedWeight
    stride: int
    pad: int


@dataclass(frozen=True)
class MaterializedLinear:
    clip: torch.Tensor
    weight: QuantizedWeight
    bias: Optional[torch.Tensor] = None
    bn: Optional[FoldedBN] = None


def _quantize_acts(x: torch.Tensor, clip: torch.Tensor, bits: int) -> torch.Tensor:
    codes, step = act_codes(x, clip, bits)
    return codes * step


@dataclass(frozen=True)
class MaterializedModel:
    """
    Modelo de inferência em k bits: sem estado aprendível e sem outros candidatos
    """

    bits: int
    architecture: ArchitectureConfig
    stem: QuantizedWeight
    blocks: Tuple[MaterializedConv, ...]
    head_bn: FoldedBN
    hidden: Optional[MaterializedLinear]
    classifier: MaterializedLinear
    mean: Tuple[float, ...] = ()
    std: Tuple[float, ...] = ()

    def _conv(self, x: torch.Tensor, layer: MaterializedConv, use_packed: bool) -> torch.Tensor:
        x = relu(layer.bn(x))
        if use_packed:
            codes, step = act_codes(x, layer.clip, self.bits)
            return packed.packed_conv2d(codes, layer.weight.codes, self.bits, self.bits,
                                        layer.stride, layer.pad, float(step), float(layer.weight.step))
        x = _quantize_acts(x, layer.clip, self.bits)
        return conv2d(x, layer.weight.dequantize(), layer.stride, layer.pad)

    def _hidden(self, x: torch.Tensor, use_packed: bool) -> torch.Tensor:
        layer = self.hidden
        if use_packed:
            codes, step = act_codes(x, layer.clip, self.bits)
            w = packed.pack(layer.weight.codes.numpy(), self.bits, signed=True,
                            scale=float(layer.weight.step))
            a = packed.pack(codes.to(torch.int64).numpy(), self.bits, signed=False, scale=float(step))
            x = packed.packed_matmul(w, a).t()
        else:
            x = matmul(_quantize_acts(x, layer.clip, self.bits), layer.weight.dequantize().t())
        return relu(layer.bn(x))

    def forward(self, x: torch.Tensor, use_packed: bool = False) -> torch.Tensor:
        """
        Logits do modelo materializado

        Args:
            x: Batch normalizado (N, C, H, W)
            use_packed: Usa os kernels AND/popcount nas camadas multiscale
                        (apenas k em {1, 2}); igual ao caminho float dentro de
                        tolerância de ponto flutuante
        """
        if use_packed and self.bits not in packed.SUPPORTED_BITS:
            raise ContractError(f"kernels empacotados exigem k em {packed.SUPPORTED_BITS}")
        with torch.no_grad():
            x = conv2d(x, self.stem.dequantize(), 1, (STEM_KERNEL - 1) // 2)
            for layer in self.blocks:
                x = self._conv(x, layer, use_packed)
            x = relu(self.head_bn(x)).mean(dim=(2, 3))
            if self.hidden is not None:
                x = self._hidden(x, use_packed)
            head = self.classifier
            x = _quantize_acts(x, head.clip, self.architecture.fixed_bits)
            return matmul(x, head.weight.dequantize().t()) + head.bias

    __call__ = forward

    def tensors(self) -> Dict[str, torch.Tensor]:
        """Todos os tensores nomeados (usado na exportação e no hash de pureza)"""
        out = {"stem.codes": self.stem.codes, "stem.step": self.stem.step}
        for i, layer in enumerate(self.blocks):
            prefix = f"blocks.{i}"
            out.update({
                f"{prefix}.bn.scale": layer.bn.scale, f"{prefix}.bn.shift": layer.bn.shift,
                f"{prefix}.clip": layer.clip,
                f"{prefix}.codes": layer.weight.codes, f"{prefix}.step": layer.weight.step,
            })
        out.update({"head_bn.scale": self.head_bn.scale, "head_bn.shift": self.head_bn.shift})
        if self.hidden is not None:
            out.update({
                "hidden.clip": self.hidden.clip, "hidden.codes": self.hidden.weight.codes,
                "hidden.step": self.hidden.weight.step,
                "hidden.bn.scale": self.hidden.bn.scale, "hidden.bn.shift": self.hidden.bn.shift,
            })
        out.update({
            "classifier.clip": self.classifier.clip, "classifier.codes": self.classifier.weight.codes,
            "classifier.step": self.classifier.weight.step, "classifier.bias": self.classifier.bias,
        })
        return out


class _BundleReader:
    """Acesso aos tensores de W e theta_k de um bundle, registrando o que foi lido"""

    def __init__(self, bundle: ModelBundle, bits: int):
        self.bundle = bundle
        self.bits = bits
        self.arch = bundle.architecture
        self.read: List[str] = []

    def key(self, kind: str) -> str:
        flag = {
            "act": self.arch.per_candidate_act,
            "bn": self.arch.per_candidate_bn,
            "weight": self.arch.per_candidate_weight,
            "alpha": True,
        }[kind]
        return str(self.bits) if flag else SHARED_KEY

    def get(self, name: str) -> torch.Tensor:
        if name not in self.bundle.tensors:
            raise IntegrityError(f"tensor ausente no bundle: {name}")
        self.read.append(name)
        return self.bundle.tensors[name]

    def folded_bn(self, prefix: str) -> FoldedBN:
        bank = f"{prefix}.banks.{self.key('bn')}"
        scale, shift = fold_batch_norm(
            self.get(f"{bank}.weight"), self.get(f"{bank}.bias"),
            self.get(f"{bank}.running_mean"), self.get(f"{bank}.running_var"), self.arch.bn_eps,
        )
        return FoldedBN(scale.clone(), shift.clone())

    def multiscale_weight(self, prefix: str) -> QuantizedWeight:
        weight = self.get(f"{prefix}.weight")
        if self.arch.subband_scales:
            alpha = self.get(f"{prefix}.alphas.{self.key('alpha')}")
            bank = get_filter_bank(self.arch.wavelet)
            weight = idwt2(scale_subbands(dwt2(weight, bank), alpha.to(weight.dtype)), bank)
        beta = self.get(f"{prefix}.betas.{self.key('weight')}")
        return _quantized(weight, beta, self.bits)

    def fixed_weight(self, prefix: str) -> QuantizedWeight:
        return _quantized(self.get(f"{prefix}.weight"), self.get(f"{prefix}.beta"), self.arch.fixed_bits)

    def clip(self, prefix: str) -> torch.Tensor:
        return self.get(f"{prefix}.clips.{self.key('act')}").clone()


def _quantized(weight: torch.Tensor, beta: torch.Tensor, bits: int) -> QuantizedWeight:
    codes, step = weight_codes(weight, beta, bits)
    return QuantizedWeight(codes.to(torch.int8), step.detach().clone().reshape(()), bits)


def materialize(bundle: ModelBundle, bits: int) -> Tuple[MaterializedModel, List[str]]:
    """Constrói o MaterializedModel lendo apenas W e theta_k; devolve também os nomes lidos"""
    if bits not in bundle.candidates:
        raise CandidateError(bits, bundle.candidates)
    reader = _BundleReader(bundle, bits)
    arch = bundle.architecture

    with torch.no_grad():
        stem = reader.fixed_weight("stem")
        blocks = []
        for i, (_, stride) in enumerate(arch.stages):
            _, pad = stage_geometry(stride)
            blocks.append(MaterializedConv(
                bn=reader.folded_bn(f"blocks.{i}.bn"),
                clip=reader.clip(f"blocks.{i}.conv"),
                weight=reader.multiscale_weight(f"blocks.{i}.conv"),
                stride=stride,
                pad=pad,
            ))
        head_bn = reader.folded_bn("head_bn")
        hidden = None
        if arch.hidden_features:
            hidden = MaterializedLinear(
                clip=reader.clip("hidden"),
                weight=reader.multiscale_weight("hidden"),
                bn=reader.folded_bn("hidden_bn"),
            )
        classifier = MaterializedLinear(
            clip=reader.get("classifier.clip").clone(),
            weight=reader.fixed_weight("classifier"),
            bias=reader.get("classifier.bias").clone(),
        )

    model = MaterializedModel(bits, arch, stem, tuple(blocks), head_bn, hidden, classifier,
                              tuple(bundle.mean), tuple(bundle.std))
    return model, reader.read


def hot_swap(bundle: ModelBundle, bits: int) -> Tuple[MaterializedModel, float]:
    """
    Materializa o bundle no bit-width k

    Returns:
        (modelo materializado, segundos de parede)

    Raises:
        CandidateError: k fora de K
    """
    with Timer() as timer:
        model, _ = materialize(bundle, bits)
    elapsed = timer.elapsed
    logger.info(f"Hot-swap para {bits} bits em {elapsed * 1000:.1f} ms")
    return model, elapsed


def hot_swap_from_file(path: Union[str, Path], bits: int
                       ) -> Tuple[MaterializedModel, ModelBundle, Dict[str, float]]:
    """
    Carga do disco + materialização, cronometradas separadamente

    Returns:
        (modelo materializado, bundle carregado, {"load": s, "materialize": s})
    """
    with Timer() as timer:
        bundle = load(path)
    model, materialize_seconds = hot_swap(bundle, bits)
    return model, bundle, {"load": timer.elapsed, "materialize": materialize_seconds}


def pack_codes(codes: np.ndarray, bits: int) -> np.ndarray:
    """Códigos com sinal em k bits por valor (complemento de dois; k=1 usa o bit de sinal)"""
    flat = np.asarray(codes, dtype=np.int64).reshape(-1)
    if bits == 1:
        unsigned = (flat > 0).astype(np.int64)
    else:
        unsigned = flat & (2 ** bits - 1)
    planes = ((unsigned[:, None] >> np.arange(bits)) & 1).astype(np.uint8)
    return np.packbits(planes.reshape(-1), bitorder="little")


def unpack_codes(data: np.ndarray, bits: int, count: int) -> np.ndarray:
    raw = np.unpackbits(np.asarray(data, dtype=np.uint8), count=count * bits, bitorder="little")
    values = (raw.reshape(count, bits).astype(np.int64) << np.arange(bits)).sum(axis=1)
    if bits == 1:
        return 2 * values - 1
    return np.where(values >= 2 ** (bits - 1), values - 2 ** bits, values)


def _code_bits(model: MaterializedModel, name: str) -> int:
    if name.startswith(("stem.", "classifier.")):
        return model.architecture.fixed_bits
    return model.bits


def export_quantized(materialized: MaterializedModel, path: Union[str, Path],
                     checksum: bool = False) -> Path:
    """
    Grava o modelo materializado com códigos empacotados em k bits

    Raises:
        ContractError: objeto não materializado
    """
    if not isinstance(materialized, MaterializedModel):
        raise ContractError("export_quantized exige um MaterializedModel")

    arrays: Dict[str, np.ndarray] = {}
    codes_table: Dict[str, Any] = {}
    for name, tensor in materialized.tensors().items():
        if name.endswith(".codes"):
            bits = _code_bits(materialized, name)
            arrays[name] = pack_codes(tensor.numpy(), bits)
            codes_table[name] = {"bits": bits, "shape": list(tensor.shape)}
        else:
            arrays[name] = tensor.detach().numpy().astype(np.float32)

    header = {
        "materialized": True,
        "bits": materialized.bits,
        "architecture": asdict(materialized.architecture),
        "normalization": {"mean": list(materialized.mean), "std": list(materialized.std)},
        "codes": codes_table,
    }
    path = write_container(path, header, arrays, checksum=checksum)
    logger.info(f"Modelo materializado ({materialized.bits} bits) exportado para {path}")
    return path


def import_quantized(path: Union[str, Path]) -> MaterializedModel:
    """
    Lê um modelo exportado por export_quantized

    Raises:
        FormatError: contêiner não materializado ou metadados inválidos
    """
    header, arrays = read_container(path)
    if not header.get("materialized"):
        raise FormatError(f"{path}: contêiner não materializado")
    try:
        arch = build_section(ArchitectureConfig, header["architecture"], "architecture")
        bits = int(header["bits"])
        codes_table = header["codes"]
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise FormatError(f"{path}: metadados inválidos: {e}") from e

    def tensor(name: str) -> torch.Tensor:
        if name not in arrays:
            raise IntegrityError(f"{path}: tensor ausente {name}")
        return torch.from_numpy(arrays[name])

    def weight(prefix: str) -> QuantizedWeight:
        entry = codes_table.get(f"{prefix}.codes")
        if entry is None:
            raise IntegrityError(f"{path}: códigos ausentes para {prefix}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        codes = unpack_codes(arrays[f"{prefix}.codes"], int(entry["bits"]), count)
        return QuantizedWeight(torch.from_numpy(codes.reshape(entry["shape"]).astype(np.int8)),
                               tensor(f"{prefix}.step").reshape(()), int(entry["bits"]))

    def bn(prefix: str) -> FoldedBN:
        return FoldedBN(tensor(f"{prefix}.scale"), tensor(f"{prefix}.shift"))

    blocks = []
    for i, (_, stride) in enumerate(arch.stages):
        _, pad = stage_geometry(stride)
        blocks.append(MaterializedConv(bn(f"blocks.{i}.bn"), tensor(f"blocks.{i}.clip").reshape(()),
                                       weight(f"blocks.{i}"), stride, pad))
    hidden = None
    if arch.hidden_features:
        hidden = MaterializedLinear(tensor("hidden.clip").reshape(()), weight("hidden"),
                                    bn=bn("hidden.bn"))
    classifier = MaterializedLinear(tensor("classifier.clip").reshape(()), weight("classifier"),
                                    bias=tensor("classifier.bias"))
    normalization = header.get("normalization") or {}
    return MaterializedModel(bits, arch, weight("stem"), tuple(blocks), bn("head_bn"), hidden,
                             classifier, tuple(normalization.get("mean") or ()),
                             tuple(normalization.get("std") or ()))
