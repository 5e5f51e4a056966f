"""
Quantizadores uniformes com clip aprendível e gradiente straight-through

Ativações seguem PACT (grade sem sinal [0, alpha_clip]); pesos usam grade
simétrica com raio beta e caso especial de 1 bit por sinal.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import torch

from config.settings import AppConfig
from core.tensor import central_difference, directional_derivative, straight_through
from utils.errors import DomainError, NearKinkError

logger = logging.getLogger(__name__)

Scalar = Union[float, torch.Tensor]


@dataclass
class WeightQuantParams:
    """Raio de clip simétrico (h^w) de uma camada para um candidato"""
    beta: torch.Tensor

    def __post_init__(self):
        _check_positive(self.beta, "beta")


@dataclass
class ActQuantParams:
    """Nível de clip PACT (h^a) de uma camada para um candidato"""
    clip: torch.Tensor

    def __post_init__(self):
        _check_positive(self.clip, "alpha_clip")


def _check_bits(bits: int):
    if not isinstance(bits, int) or not AppConfig.MIN_BITS <= bits <= AppConfig.MAX_BITS:
        raise DomainError(f"bit-width {bits} fora de [1, 8]")


def _check_positive(value: Scalar, name: str):
    tensor = value if torch.is_tensor(value) else torch.tensor(float(value))
    if not bool((tensor > 0).all()):
        raise DomainError(f"{name} deve ser > 0")


def _as_tensor(value: Scalar, like: torch.Tensor) -> torch.Tensor:
    if torch.is_tensor(value):
        return value.to(like.dtype)
    return torch.tensor(float(value), dtype=like.dtype)


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    """Arredondamento com empates para longe de zero"""
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def weight_levels(bits: int) -> int:
    """q = 2^(k-1) - 1 para k >= 2"""
    return 2 ** (bits - 1) - 1


def act_levels(bits: int) -> int:
    """q = 2^k - 1"""
    return 2 ** bits - 1


def weight_codes(w: torch.Tensor, beta: Scalar, bits: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Códigos inteiros e passo da grade de pesos

    Returns:
        (códigos em float, passo) tais que o peso quantizado é códigos * passo;
        para k = 1 os códigos são +-1 (sign(0) = +1) e o passo é beta
    """
    _check_bits(bits)
    _check_positive(beta, "beta")
    beta = _as_tensor(beta, w)
    if bits == 1:
        codes = torch.where(w >= 0, torch.ones_like(w), -torch.ones_like(w))
        return codes, beta
    step = beta / weight_levels(bits)
    clipped = torch.maximum(torch.minimum(w, beta), -beta)
    return round_half_away(clipped / step), step


def act_codes(x: torch.Tensor, clip: Scalar, bits: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Códigos inteiros em {0..2^k-1} e passo alpha_clip / (2^k - 1)"""
    _check_bits(bits)
    _check_positive(clip, "alpha_clip")
    clip = _as_tensor(clip, x)
    step = clip / act_levels(bits)
    clipped = torch.minimum(torch.clamp(x, min=0.0), clip)
    return torch.floor(clipped / step + 0.5), step


def _weight_forward(w, beta, bits):
    codes, step = weight_codes(w, beta, bits)
    return codes * step


def _weight_backward(grad, w, beta, bits):
    inside = torch.abs(w) <= beta
    grad_w = grad * inside
    # PACT simétrico: sign(w) fora do raio, resíduo de arredondamento descartado
    grad_beta = (grad * torch.sign(w) * (~inside)).sum().reshape(beta.shape)
    return grad_w, grad_beta, None


def _act_forward(x, clip, bits):
    codes, step = act_codes(x, clip, bits)
    return codes * step


def _act_backward(grad, x, clip, bits):
    grad_x = grad * ((x > 0) & (x < clip))
    grad_clip = (grad * (x >= clip)).sum().reshape(clip.shape)
    return grad_x, grad_clip, None


_weight_ste = straight_through("WeightQuantSTE", _weight_forward, _weight_backward)
_act_ste = straight_through("ActQuantSTE", _act_forward, _act_backward)


def quantize_weights(w: torch.Tensor, beta: Scalar, bits: int) -> torch.Tensor:
    """
    Quantização simétrica de pesos (h^w = beta)

    k >= 2: round(clip(w, -beta, beta) / passo) * passo, passo = beta / (2^(k-1) - 1)
    k = 1:  beta * sign(w)
    """
    _check_bits(bits)
    _check_positive(beta, "beta")
    return _weight_ste(w, _as_tensor(beta, w), bits)


def quantize_acts(x: torch.Tensor, clip: Scalar, bits: int) -> torch.Tensor:
    """Quantização PACT de ativações (h^a = alpha_clip)"""
    _check_bits(bits)
    _check_positive(clip, "alpha_clip")
    return _act_ste(x, _as_tensor(clip, x), bits)


def clip_weights(w: torch.Tensor, beta: Scalar) -> torch.Tensor:
    """Substituto sem arredondamento usado na verificação do STE"""
    beta = _as_tensor(beta, w)
    return torch.maximum(torch.minimum(w, beta), -beta)


def clip_acts(x: torch.Tensor, clip: Scalar) -> torch.Tensor:
    clip = _as_tensor(clip, x)
    return torch.minimum(torch.clamp(x, min=0.0), clip)


def ste_grad_check(op: str, point: torch.Tensor, direction: torch.Tensor, clip: float,
                   bits: int, wrt: str = "input", eps: float = 1e-3) -> Tuple[float, float]:
    """
    Compara a derivada direcional sob STE com a diferença finita do
    substituto somente-clip

    Args:
        op: "weights" ou "acts"
        point: Ponto de avaliação (float64 recomendado)
        direction: Direção (mesmo shape de point; ignorada para wrt="clip")
        clip: beta (pesos) ou alpha_clip (ativações)
        bits: Bit-width
        wrt: "input" ou "clip"
        eps: Passo da diferença central

    Returns:
        (analítico, numérico)

    Raises:
        NearKinkError: ponto a menos de 3*eps de uma fronteira de clip
    """
    if op not in ("weights", "acts"):
        raise ValueError(f"op desconhecida: {op}")
    point = point.detach()
    margin = 3 * eps

    if op == "weights":
        quantize: Callable = quantize_weights
        surrogate: Callable = clip_weights
        boundaries = [torch.abs(torch.abs(point) - clip)]
    else:
        quantize = quantize_acts
        surrogate = clip_acts
        boundaries = [torch.abs(point), torch.abs(point - clip)]
    if any(bool((b < margin).any()) for b in boundaries):
        raise NearKinkError("ponto próximo de uma fronteira de clip")

    if wrt == "input":
        analytic = directional_derivative(lambda x: quantize(x, clip, bits), point, direction)
        numeric = central_difference(lambda x: surrogate(x, clip), point, direction, eps)
        return analytic, numeric

    if wrt != "clip":
        raise ValueError(f"wrt desconhecido: {wrt}")
    level = torch.tensor(float(clip), dtype=point.dtype, requires_grad=True)
    out = quantize(point, level, bits).sum()
    (grad,) = torch.autograd.grad(out, level)
    with torch.no_grad():
        plus = surrogate(point, clip + eps).sum()
        minus = surrogate(point, clip - eps).sum()
    return float(grad), float((plus - minus) / (2 * eps))
