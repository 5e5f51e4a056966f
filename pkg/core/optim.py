"""
Otimizador SGD e agenda de learning rate
"""

import logging
from typing import Iterable, List, Optional, Sequence

import torch

from core.tensor import leaves_with_grad
from utils.errors import ContractError

logger = logging.getLogger(__name__)


def build_optimizer(params: Iterable[torch.Tensor], lr: float, weight_decay: float,
                    momentum: float) -> torch.optim.SGD:
    """
    SGD com momentum (dampening 0, sem Nesterov):
    v = momentum * v_prev + grad + weight_decay * p;  p = p - lr * v
    """
    return torch.optim.SGD(list(params), lr=lr, momentum=momentum,
                           weight_decay=weight_decay, dampening=0.0, nesterov=False)


def build_scheduler(optimizer: torch.optim.Optimizer, milestones: Sequence[int],
                    factor: float) -> torch.optim.lr_scheduler.MultiStepLR:
    """Decaimento em degraus por época"""
    return torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=list(milestones), gamma=factor)


def sgd_step(optimizer: torch.optim.Optimizer, required: Optional[List[torch.Tensor]] = None):
    """
    Aplica um passo e libera os gradientes

    Parâmetros sem gradiente (grad None) são ignorados pelo torch, inclusive
    no weight decay e no buffer de momentum; por isso os gradientes são
    liberados (None) e não zerados.

    Args:
        optimizer: Otimizador construído por build_optimizer
        required: Parâmetros que obrigatoriamente devem ter gradiente

    Raises:
        ContractError: algum parâmetro obrigatório sem gradiente
    """
    if required is not None and not leaves_with_grad(required):
        missing = sum(1 for p in required if p.grad is None)
        raise ContractError(f"sgd_step: {missing} parâmetro(s) sem gradiente")
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
