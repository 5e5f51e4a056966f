"""
Núcleo tensorial: operações densas com contratos verificados sobre torch

O grafo de autodiferenciação é o do torch (construído a cada forward e
liberado após o backward). Este módulo acrescenta as verificações de
geometria/dimensão e o gancho de gradiente customizado usado por todos os
estimadores straight-through.
"""

import logging
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

from config.settings import AppConfig
from utils.errors import ContractError, DimensionError, GeometryError, NumericalError

logger = logging.getLogger(__name__)

DTYPE = torch.float32


def check_finite(t: torch.Tensor, op: str) -> torch.Tensor:
    """Em modo debug, aborta se a saída de `op` contém NaN/Inf"""
    if AppConfig.DEBUG and t.is_floating_point() and not torch.isfinite(t).all():
        raise NumericalError(f"{op}: saída contém NaN/Inf")
    return t


def conv_output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    """
    Extensão de saída de uma convolução, exigindo divisão exata

    Raises:
        GeometryError: se (size + 2*pad - kernel) não é múltiplo de stride
    """
    if stride < 1 or pad < 0:
        raise GeometryError(f"stride {stride} / pad {pad} inválidos")
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise GeometryError(
            f"extensão de saída não inteira: ({size} + 2*{pad} - {kernel}) / {stride}"
        )
    return span // stride + 1


def conv2d(input: torch.Tensor, weight: torch.Tensor, stride: int = 1, pad: int = 0,
           bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Correlação cruzada 2D (sem inversão do kernel), NCHW"""
    if input.dim() != 4 or weight.dim() != 4:
        raise DimensionError(f"conv2d espera tensores 4D, recebeu {tuple(input.shape)} e {tuple(weight.shape)}")
    if input.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: Cin {input.shape[1]} != {weight.shape[1]}")
    conv_output_extent(input.shape[2], weight.shape[2], stride, pad)
    conv_output_extent(input.shape[3], weight.shape[3], stride, pad)
    out = F.conv2d(input, weight, bias=bias, stride=stride, padding=pad)
    return check_finite(out, "conv2d")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2:
        raise DimensionError("matmul espera matrizes 2D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: dimensões internas {a.shape[1]} != {b.shape[0]}")
    return check_finite(a @ b, "matmul")


def relu(x: torch.Tensor) -> torch.Tensor:
    return F.relu(x)


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return check_finite(a + b, "add")


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return check_finite(a * b, "mul")


def scale(x: torch.Tensor, factor) -> torch.Tensor:
    return check_finite(x * factor, "scale")


def reduce_sum(x: torch.Tensor) -> torch.Tensor:
    return check_finite(x.sum(), "sum")


def reduce_mean(x: torch.Tensor) -> torch.Tensor:
    return check_finite(x.mean(), "mean")


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Entropia cruzada com softmax, média sobre o batch"""
    if logits.dim() != 2:
        raise DimensionError(f"logits devem ser [N, C], recebeu {tuple(logits.shape)}")
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError("labels devem ser [N] alinhados aos logits")
    return check_finite(F.cross_entropy(logits, labels.long(), reduction="mean"), "softmax_cross_entropy")


def backward(loss: torch.Tensor):
    """
    Propaga gradientes a partir de uma loss escalar

    Raises:
        ContractError: loss não escalar ou fora de um grafo
    """
    if loss.numel() != 1:
        raise ContractError(f"backward exige loss escalar, shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss não pertence a um grafo diferenciável")
    if not torch.isfinite(loss).all():
        raise NumericalError(f"loss não finita: {loss.item()}")
    loss.backward()


def straight_through(name: str, forward: Callable, backward: Callable) -> Callable:
    """
    Cria uma operação com regra de backward customizada

    `forward(*args)` calcula a saída; `backward(grad, *args)` devolve uma
    tupla com um gradiente (ou None) por argumento. A derivada verdadeira
    (nula quase sempre para funções em degrau) é ignorada.

    Args:
        name: Nome da classe Function gerada
        forward: Regra de forward
        backward: Regra de backward

    Returns:
        Função `apply` da torch.autograd.Function gerada
    """

    def _forward(ctx, *args):
        tensor_slots = [i for i, a in enumerate(args) if torch.is_tensor(a)]
        ctx.save_for_backward(*[args[i] for i in tensor_slots])
        ctx.tensor_slots = tensor_slots
        ctx.static_args = [None if torch.is_tensor(a) else a for a in args]
        return forward(*args)

    def _backward(ctx, grad_output):
        args = list(ctx.static_args)
        for slot, saved in zip(ctx.tensor_slots, ctx.saved_tensors):
            args[slot] = saved
        grads = backward(grad_output, *args)
        if len(grads) != len(args):
            raise ContractError(f"{name}: backward devolveu {len(grads)} gradientes para {len(args)} argumentos")
        return tuple(grads)

    function = type(name, (torch.autograd.Function,), {
        "forward": staticmethod(_forward),
        "backward": staticmethod(_backward),
    })
    return function.apply


def directional_derivative(fn: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor,
                           direction: torch.Tensor) -> float:
    """<grad sum(fn(x)), d> calculado por autodiferenciação"""
    x = point.detach().clone().requires_grad_(True)
    out = fn(x).sum()
    (grad,) = torch.autograd.grad(out, x)
    return float((grad * direction).sum())


def central_difference(fn: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor,
                       direction: torch.Tensor, eps: float = 1e-3) -> float:
    """Diferença central de sum(fn(x)) na direção d"""
    with torch.no_grad():
        plus = fn(point + eps * direction).sum()
        minus = fn(point - eps * direction).sum()
    return float((plus - minus) / (2 * eps))


def leaves_with_grad(params: Sequence[torch.Tensor]) -> bool:
    return all(p.grad is not None for p in params)
