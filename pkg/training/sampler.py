"""
Amostrador semeado de bit-width
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from utils.errors import DomainError

logger = logging.getLogger(__name__)


class BitWidthSampler:
    """Sorteia k em K com probabilidade p_k a partir de um PRNG semeado"""

    def __init__(self, candidates: Sequence[int], probabilities: Optional[Sequence[float]] = None,
                 seed: int = 0):
        self.candidates = [int(k) for k in candidates]
        if not self.candidates:
            raise DomainError("conjunto de candidatos vazio")
        if probabilities is None:
            probabilities = [1.0 / len(self.candidates)] * len(self.candidates)
        probs = np.asarray(probabilities, dtype=np.float64)
        if probs.shape != (len(self.candidates),):
            raise DomainError("uma probabilidade por candidato")
        if (probs < 0).any():
            raise DomainError("probabilidades negativas")
        if probs.sum() == 0:
            raise DomainError("todas as probabilidades são zero")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DomainError(f"probabilidades somam {probs.sum()}, esperado 1")

        self.probabilities = probs / probs.sum()
        self.seed = seed
        self.rng = np.random.default_rng(seed)

        idle = [k for k, p in zip(self.candidates, self.probabilities) if p == 0]
        if idle:
            logger.warning(f"Candidatos com probabilidade zero (não serão treinados no estágio 2): {idle}")

    def sample(self) -> int:
        return int(self.rng.choice(self.candidates, p=self.probabilities))

    def draws(self, n: int) -> List[int]:
        return [self.sample() for _ in range(n)]


def sample_bitwidth(sampler: BitWidthSampler) -> int:
    return sampler.sample()
