"""
Rede desk-scale pré-ativação com camadas multiscale e seletor de candidato
"""

import logging
from collections import defaultdict
from typing import Dict, Iterator, List, Optional, Sequence, Union

import torch
import torch.nn as nn

from config.settings import ArchitectureConfig
from core.tensor import relu
from models.layers import (
    SHARED_KEY, THETA_CONTAINERS, CandidateContext, CandidateSet, FixedConv2d, FixedLinear,
    MSConv2d, MSLinear, MultiBN, MultiscaleLayer,
)
from quant.wavelet import get_filter_bank
from utils.errors import CandidateError, DimensionError

logger = logging.getLogger(__name__)

STEM_KERNEL = 3


def stage_geometry(stride: int):
    """
    (kernel, pad) de uma camada multiscale

    Stride 2 usa kernel 4x4 com pad 1, o que mantém a divisão exata
    H' = H / 2 para H par.
    """
    if stride == 1:
        return 3, 1
    return 4, 1


class MultiscaleBlock(nn.Module):
    """BN_k -> ReLU -> Q_a -> conv(Q_w(W_k))"""

    def __init__(self, bn: MultiBN, conv: MSConv2d):
        super().__init__()
        self.bn = bn
        self.conv = conv

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(relu(self.bn(x)))


class MultiscaleNet(nn.Module):
    """
    ModelGraph: camadas ordenadas, candidato ativo e partição {W} U {theta_k}

    Os parâmetros theta de cada candidato vivem em contêineres chaveados por
    str(k) ("alphas", "betas", "clips", "banks"); todo o resto é compartilhado.
    """

    def __init__(self, arch: ArchitectureConfig, candidates: CandidateSet):
        super().__init__()
        self.arch = arch
        self.candidates = candidates
        self.ctx = CandidateContext(
            candidates,
            per_candidate={
                "act": arch.per_candidate_act,
                "bn": arch.per_candidate_bn,
                "weight": arch.per_candidate_weight,
                "alpha": True,
            },
            subband_scales=arch.subband_scales,
        )
        bank = get_filter_bank(arch.wavelet)

        self.stem = FixedConv2d(arch.in_channels, arch.stem_channels, STEM_KERNEL, 1, 1,
                                arch.fixed_bits, self.ctx, arch.weight_clip_mult)

        blocks = []
        channels = arch.stem_channels
        for out_channels, stride in arch.stages:
            kernel, pad = stage_geometry(stride)
            blocks.append(MultiscaleBlock(
                MultiBN(channels, self.ctx, arch.bn_momentum, arch.bn_eps),
                MSConv2d(channels, out_channels, kernel, stride, pad, self.ctx,
                         arch.act_clip_init, arch.weight_clip_mult, bank),
            ))
            channels = out_channels
        self.blocks = nn.ModuleList(blocks)
        self.head_bn = MultiBN(channels, self.ctx, arch.bn_momentum, arch.bn_eps)

        self.hidden: Optional[MSLinear] = None
        self.hidden_bn: Optional[MultiBN] = None
        if arch.hidden_features:
            self.hidden = MSLinear(channels, arch.hidden_features, self.ctx,
                                   arch.act_clip_init, arch.weight_clip_mult, bank)
            self.hidden_bn = MultiBN(arch.hidden_features, self.ctx, arch.bn_momentum, arch.bn_eps)
            channels = arch.hidden_features

        self.classifier = FixedLinear(channels, arch.num_classes, arch.fixed_bits, self.ctx,
                                      arch.act_clip_init, arch.weight_clip_mult)

    @property
    def active_bits(self) -> int:
        return self.ctx.active_bits

    @property
    def theta_bits(self) -> int:
        return self.ctx.theta_bits

    def set_active_candidate(self, bits: int, force: bool = False):
        self.ctx.activate(bits, force=force)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.arch.in_channels:
            raise DimensionError(
                f"entrada deve ser [N, {self.arch.in_channels}, H, W], recebeu {tuple(x.shape)}"
            )
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        x = relu(self.head_bn(x))
        x = x.mean(dim=(2, 3))
        if self.hidden is not None:
            x = relu(self.hidden_bn(self.hidden(x)))
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x))

    def multiscale_layers(self) -> List[MultiscaleLayer]:
        return [m for m in self.modules() if isinstance(m, MultiscaleLayer)]

    def bn_layers(self) -> List[MultiBN]:
        return [m for m in self.modules() if isinstance(m, MultiBN)]

    def partition(self) -> Dict[str, List[str]]:
        """
        Nomes do state_dict agrupados por dono: "W" para o compartilhado,
        str(k) para theta_k e "shared" para slots theta compartilhados (ablações)
        """
        groups: Dict[str, List[str]] = defaultdict(list)
        for name in self.state_dict():
            groups[partition_key(name)].append(name)
        return dict(groups)

    def theta_state(self, bits: Union[int, str]) -> Dict[str, torch.Tensor]:
        state = self.state_dict()
        return {name: state[name] for name in self.partition().get(str(bits), [])}

    def shared_state(self) -> Dict[str, torch.Tensor]:
        state = self.state_dict()
        return {name: state[name] for name in self.partition().get("W", [])}

    def theta_parameters(self, bits: Union[int, str]) -> List[nn.Parameter]:
        key = str(bits)
        return [p for name, p in self.named_parameters() if partition_key(name) == key]

    def shared_parameters(self) -> List[nn.Parameter]:
        """W de todas as camadas mais os parâmetros das camadas fixas"""
        return [p for name, p in self.named_parameters() if partition_key(name) in ("W", SHARED_KEY)]

    def alpha_parameters(self) -> Iterator[nn.Parameter]:
        for layer in self.multiscale_layers():
            yield from layer.alphas.values()

    def set_alpha_trainable(self, trainable: bool):
        for alpha in self.alpha_parameters():
            alpha.requires_grad_(trainable)

    def parameter_report(self) -> Dict[str, int]:
        """Número de parâmetros por grupo da partição"""
        counts: Dict[str, int] = defaultdict(int)
        for name, p in self.named_parameters():
            counts[partition_key(name)] += p.numel()
        return dict(counts)


def partition_key(name: str) -> str:
    parts = name.split(".")
    for i, part in enumerate(parts[:-1]):
        if part in THETA_CONTAINERS:
            return parts[i + 1]
    return "W"


def build_model(arch: ArchitectureConfig, candidates: Sequence[int]) -> MultiscaleNet:
    arch.validate()
    model = MultiscaleNet(arch, CandidateSet.of(candidates))
    logger.info(
        f"Modelo criado: K={list(model.candidates)}, "
        f"{sum(p.numel() for p in model.parameters())} parâmetros"
    )
    return model


def reconstruct_weights(layer: MultiscaleLayer, bits: int) -> torch.Tensor:
    """W_k = IDWT(alpha_k * DWT(W)) para uma camada e um candidato de K"""
    layer.ctx.candidates.require(bits)
    return layer.reconstruct(bits)


def set_active_candidate(model: MultiscaleNet, bits: int, force: bool = False):
    model.set_active_candidate(bits, force=force)


def forward(model: MultiscaleNet, batch: torch.Tensor, bits: int) -> torch.Tensor:
    """Logits do modelo com theta_k"""
    if bits not in model.candidates:
        raise CandidateError(bits, model.candidates.bits)
    model.set_active_candidate(bits)
    return model(batch)


def subband_masked_forward(model: MultiscaleNet, batch: torch.Tensor, mask: Sequence[bool],
                           bits: Optional[int] = None) -> torch.Tensor:
    """
    Forward reconstruindo os pesos apenas com as subbandas marcadas

    Args:
        model: Modelo
        batch: Entrada
        mask: 4 booleanos (ll, lh, hl, hh)
        bits: Candidato; None avalia em precisão total (sem quantização)
              usando as escalas do candidato de maior precisão

    Returns:
        Logits
    """
    if len(mask) != 4:
        raise DimensionError(f"máscara deve ter 4 entradas, recebeu {len(mask)}")
    previous = (model.ctx.active_bits, model.ctx.theta_bits)
    target = model.candidates.bits[0] if bits is None else bits
    try:
        model.set_active_candidate(target)
        with model.ctx.masked(mask, full_precision=bits is None):
            return model(batch)
    finally:
        model.ctx.active_bits, model.ctx.theta_bits = previous
