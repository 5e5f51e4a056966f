"""
Camadas multiscale: pesos reconstruídos por wavelet, quantizadores e BN por candidato
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from config.settings import AppConfig
from core.tensor import conv2d, matmul
from quant.quantizers import quantize_acts, quantize_weights
from quant.wavelet import HAAR, FilterBank, dwt2, idwt2, scale_subbands
from utils.errors import CandidateError, DomainError, GeometryError
from utils.helpers import nearest_candidate

logger = logging.getLogger(__name__)

# Contêineres cujas chaves são candidatos (ou "shared" nas ablações)
THETA_CONTAINERS = ("alphas", "betas", "clips", "banks")
SHARED_KEY = "shared"
THETA_KINDS = ("act", "bn", "weight", "alpha")


@dataclass(frozen=True)
class CandidateSet:
    """Bit-widths suportados: não vazio, sem duplicatas, ordem decrescente"""

    bits: Tuple[int, ...]

    def __post_init__(self):
        if not self.bits:
            raise DomainError("conjunto de candidatos vazio")
        if len(set(self.bits)) != len(self.bits):
            raise DomainError(f"candidatos duplicados: {self.bits}")
        if any(not AppConfig.MIN_BITS <= k <= AppConfig.MAX_BITS for k in self.bits):
            raise DomainError(f"candidatos fora de [1, 8]: {self.bits}")
        if list(self.bits) != sorted(self.bits, reverse=True):
            raise DomainError(f"candidatos devem estar em ordem decrescente: {self.bits}")

    @classmethod
    def of(cls, bits: Iterable[int]) -> "CandidateSet":
        return cls(tuple(sorted((int(k) for k in bits), reverse=True)))

    def __contains__(self, bits) -> bool:
        return bits in self.bits

    def __iter__(self) -> Iterator[int]:
        return iter(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def require(self, bits: int) -> int:
        if bits not in self.bits:
            raise CandidateError(bits, self.bits)
        return bits


class CandidateContext:
    """
    Estado compartilhado por todas as camadas de um modelo: candidato ativo,
    de qual candidato vêm os parâmetros theta e as chaves de ablação
    """

    def __init__(self, candidates: CandidateSet, per_candidate: Dict[str, bool],
                 subband_scales: bool = True):
        self.candidates = candidates
        self.per_candidate = dict(per_candidate)
        self.subband_scales = subband_scales
        self.active_bits = candidates.bits[0]
        self.theta_bits = candidates.bits[0]
        self.full_precision = False
        self.subband_mask: Optional[Tuple[bool, bool, bool, bool]] = None

    def key_for(self, kind: str, bits: Optional[int] = None) -> str:
        """Chave do contêiner theta de `kind` para o candidato `bits`"""
        if not self.per_candidate.get(kind, True):
            return SHARED_KEY
        return str(self.theta_bits if bits is None else bits)

    def slot_keys(self, kind: str) -> List[str]:
        if not self.per_candidate.get(kind, True):
            return [SHARED_KEY]
        return [str(k) for k in self.candidates]

    def activate(self, bits: int, force: bool = False):
        """
        Define o bit-width ativo

        Com force=True aceita k fora de K, reaproveitando o theta do
        candidato treinado mais próximo.
        """
        if bits in self.candidates:
            self.active_bits = bits
            self.theta_bits = bits
            return
        if not force:
            raise CandidateError(bits, self.candidates.bits)
        if not AppConfig.MIN_BITS <= bits <= AppConfig.MAX_BITS:
            raise DomainError(f"bit-width {bits} fora de [1, 8]")
        self.active_bits = bits
        self.theta_bits = nearest_candidate(bits, self.candidates)

    @contextmanager
    def masked(self, mask: Optional[Sequence[bool]], full_precision: bool = False):
        """Restringe a reconstrução às subbandas marcadas em `mask`"""
        previous = (self.subband_mask, self.full_precision)
        self.subband_mask = tuple(bool(m) for m in mask) if mask is not None else None
        self.full_precision = full_precision
        try:
            yield self
        finally:
            self.subband_mask, self.full_precision = previous


def fold_batch_norm(weight: torch.Tensor, bias: torch.Tensor, mean: torch.Tensor,
                    var: torch.Tensor, eps: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """BN em modo de avaliação como afim por canal: y = x * scale + shift"""
    scale = weight / torch.sqrt(var + eps)
    shift = bias - mean * scale
    return scale, shift


def apply_affine(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    shape = (1, -1) + (1,) * (x.dim() - 2)
    return x * scale.reshape(shape) + shift.reshape(shape)


class BNBank(nn.Module):
    """Parâmetros B_k de um candidato: gamma, beta, media e variância móveis"""

    def __init__(self, num_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def folded(self, eps: float) -> Tuple[torch.Tensor, torch.Tensor]:
        return fold_batch_norm(self.weight, self.bias, self.running_mean, self.running_var, eps)


class MultiBN(nn.Module):
    """BN com um banco isolado por candidato"""

    def __init__(self, num_features: int, ctx: CandidateContext, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        if eps <= 0:
            raise DomainError("eps deve ser > 0")
        self.ctx = ctx
        self.momentum = momentum
        self.eps = eps
        self.banks = nn.ModuleDict({key: BNBank(num_features) for key in ctx.slot_keys("bn")})

    def bank(self, bits: Optional[int] = None) -> BNBank:
        return self.banks[self.ctx.key_for("bn", bits)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bank = self.bank()
        if self.training:
            # Estatísticas do batch; apenas o banco ativo é atualizado
            return F.batch_norm(x, bank.running_mean, bank.running_var, bank.weight, bank.bias,
                                training=True, momentum=self.momentum, eps=self.eps)
        scale, shift = bank.folded(self.eps)
        return apply_affine(x, scale, shift)


class FixedConv2d(nn.Module):
    """Primeira convolução: pesos em bit-width fixo, sem tratamento wavelet"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, pad: int,
                 bits: int, ctx: CandidateContext, weight_clip_mult: float = 3.0):
        super().__init__()
        self.ctx = ctx
        self.bits = bits
        self.stride = stride
        self.pad = pad
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel, kernel))
        nn.init.kaiming_normal_(self.weight, nonlinearity="relu")
        self.beta = nn.Parameter(weight_clip_mult * self.weight.detach().abs().mean().reshape(()))

    def quantized_weight(self) -> torch.Tensor:
        if self.ctx.full_precision:
            return self.weight
        return quantize_weights(self.weight, self.beta, self.bits)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.quantized_weight(), self.stride, self.pad)


class FixedLinear(nn.Module):
    """Classificador final: ativações e pesos em bit-width fixo"""

    def __init__(self, in_features: int, out_features: int, bits: int, ctx: CandidateContext,
                 act_clip_init: float = 8.0, weight_clip_mult: float = 3.0):
        super().__init__()
        self.ctx = ctx
        self.bits = bits
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.beta = nn.Parameter(weight_clip_mult * self.weight.detach().abs().mean().reshape(()))
        self.clip = nn.Parameter(torch.tensor(float(act_clip_init)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.ctx.full_precision:
            return matmul(x, self.weight.t()) + self.bias
        x = quantize_acts(x, self.clip, self.bits)
        w = quantize_weights(self.weight, self.beta, self.bits)
        return matmul(x, w.t()) + self.bias


class MultiscaleLayer(nn.Module):
    """
    Base das camadas multiscale: W compartilhado; por candidato as escalas de
    subbanda alpha_k, o raio beta_k (pesos) e o clip PACT alpha_clip_k (entrada)
    """

    def __init__(self, weight_shape: Tuple[int, ...], ctx: CandidateContext,
                 act_clip_init: float, weight_clip_mult: float, bank: FilterBank = HAAR):
        super().__init__()
        if weight_shape[0] % 2 or weight_shape[1] % 2:
            raise GeometryError(f"camada multiscale exige canais pares, recebeu {weight_shape}")
        self.ctx = ctx
        self.bank = bank
        self.weight = nn.Parameter(torch.empty(*weight_shape))
        self.init_weight()

        # alpha = (1,1,1,1): reconstrução identidade, então beta parte de 3*mean|W|
        beta0 = weight_clip_mult * self.weight.detach().abs().mean()
        self.alphas = nn.ParameterDict({
            key: nn.Parameter(torch.ones(4)) for key in ctx.slot_keys("alpha")
        }) if ctx.subband_scales else nn.ParameterDict()
        self.betas = nn.ParameterDict({
            key: nn.Parameter(beta0.clone().reshape(())) for key in ctx.slot_keys("weight")
        })
        self.clips = nn.ParameterDict({
            key: nn.Parameter(torch.tensor(float(act_clip_init))) for key in ctx.slot_keys("act")
        })

    def init_weight(self):
        nn.init.kaiming_normal_(self.weight, nonlinearity="relu")

    def alpha(self, bits: Optional[int] = None) -> Optional[torch.Tensor]:
        if not self.ctx.subband_scales:
            return None
        alpha = self.alphas[self.ctx.key_for("alpha", bits)]
        if self.ctx.subband_mask is not None:
            mask = torch.tensor(self.ctx.subband_mask, dtype=alpha.dtype)
            alpha = alpha * mask
        return alpha

    def beta(self, bits: Optional[int] = None) -> torch.Tensor:
        return self.betas[self.ctx.key_for("weight", bits)]

    def clip(self, bits: Optional[int] = None) -> torch.Tensor:
        return self.clips[self.ctx.key_for("act", bits)]

    def reconstruct(self, bits: Optional[int] = None) -> torch.Tensor:
        """W_k = IDWT(alpha_k * DWT(W)); identidade quando as escalas estão desligadas"""
        alpha = self.alpha(bits)
        if alpha is None:
            if self.ctx.subband_mask is None or all(self.ctx.subband_mask):
                return self.weight
            alpha = torch.tensor(self.ctx.subband_mask, dtype=self.weight.dtype)
        subbands = dwt2(self.weight, self.bank)
        return idwt2(scale_subbands(subbands, alpha.to(self.weight.dtype)), self.bank)

    def quantized_weight(self, bits: Optional[int] = None) -> torch.Tensor:
        reconstructed = self.reconstruct(bits)
        if self.ctx.full_precision:
            return reconstructed
        width = self.ctx.active_bits if bits is None else bits
        return quantize_weights(reconstructed, self.beta(bits), width)

    def quantize_input(self, x: torch.Tensor) -> torch.Tensor:
        if self.ctx.full_precision:
            return x
        return quantize_acts(x, self.clip(), self.ctx.active_bits)

    def theta_parameters(self, key: str) -> List[nn.Parameter]:
        params = []
        for container in (self.alphas, self.betas, self.clips):
            if key in container:
                params.append(container[key])
        return params


class MSConv2d(MultiscaleLayer):
    """conv(Q_a(x, h_k^a), Q_w(W_k, h_k^w))"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, pad: int,
                 ctx: CandidateContext, act_clip_init: float = 8.0,
                 weight_clip_mult: float = 3.0, bank: FilterBank = HAAR):
        super().__init__((out_channels, in_channels, kernel, kernel), ctx,
                         act_clip_init, weight_clip_mult, bank)
        self.stride = stride
        self.pad = pad

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(self.quantize_input(x), self.quantized_weight(), self.stride, self.pad)


class MSLinear(MultiscaleLayer):
    """Versão totalmente conectada da camada multiscale (pesos Out x In)"""

    def __init__(self, in_features: int, out_features: int, ctx: CandidateContext,
                 act_clip_init: float = 8.0, weight_clip_mult: float = 3.0,
                 bank: FilterBank = HAAR):
        super().__init__((out_features, in_features), ctx, act_clip_init, weight_clip_mult, bank)

    def init_weight(self):
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return matmul(self.quantize_input(x), self.quantized_weight().t())
