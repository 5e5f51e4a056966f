"""
Decomposição wavelet 2D de nível único sobre o plano (dim0, dim1) de pesos

Para pesos de convolução (Cout, Cin, Kh, Kw) o plano decomposto é
(Cout, Cin); as dimensões espaciais seguem como faixas independentes.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import torch

from utils.errors import DimensionError, GeometryError

logger = logging.getLogger(__name__)


class SubbandSet(NamedTuple):
    """Componentes de meia resolução de um tensor de pesos"""
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


SUBBAND_NAMES = SubbandSet._fields


@dataclass(frozen=True)
class FilterBank:
    """Banco de filtros 2x2 (f_ll, f_lh, f_hl, f_hh)"""

    name: str
    f_ll: tuple
    f_lh: tuple
    f_hl: tuple
    f_hh: tuple

    def filters(self):
        return (self.f_ll, self.f_lh, self.f_hl, self.f_hh)

    def is_orthonormal(self, tol: float = 1e-12) -> bool:
        """Verifica que os quatro filtros formam uma base ortonormal de R^4"""
        rows = [[v for row in f for v in row] for f in self.filters()]
        for i, a in enumerate(rows):
            for j, b in enumerate(rows):
                dot = sum(x * y for x, y in zip(a, b))
                if abs(dot - (1.0 if i == j else 0.0)) > tol:
                    return False
        return True


HAAR = FilterBank(
    name="haar",
    f_ll=((0.5, 0.5), (0.5, 0.5)),
    f_lh=((0.5, 0.5), (-0.5, -0.5)),
    f_hl=((0.5, -0.5), (0.5, -0.5)),
    f_hh=((0.5, -0.5), (-0.5, 0.5)),
)

FILTER_BANKS = {"haar": HAAR}


def get_filter_bank(name: str) -> FilterBank:
    if name not in FILTER_BANKS:
        raise KeyError(f"banco de filtros desconhecido: {name}")
    return FILTER_BANKS[name]


def _blocks(weight: torch.Tensor):
    """Separa os blocos 2x2 disjuntos do plano (dim0, dim1): a, b, c, d"""
    if weight.dim() < 2:
        raise GeometryError("dwt2 exige ao menos duas dimensões")
    rows, cols = weight.shape[0], weight.shape[1]
    if rows < 2 or cols < 2 or rows % 2 or cols % 2:
        raise GeometryError(f"dwt2 exige extensões iniciais pares >= 2, recebeu {tuple(weight.shape)}")
    rest = weight.shape[2:]
    grid = weight.reshape(rows // 2, 2, cols // 2, 2, *rest)
    return grid[:, 0, :, 0], grid[:, 0, :, 1], grid[:, 1, :, 0], grid[:, 1, :, 1]


def dwt2(weight: torch.Tensor, bank: FilterBank = HAAR) -> SubbandSet:
    """
    Transformada direta: cada subbanda é a correlação do filtro 2x2 com um
    bloco disjunto, stride 2

    Args:
        weight: Tensor com as duas primeiras extensões pares
        bank: Banco de filtros (apenas Haar é distribuído)

    Returns:
        SubbandSet com extensões iniciais pela metade
    """
    a, b, c, d = _blocks(weight)
    bands = []
    for f in bank.filters():
        (f00, f01), (f10, f11) = f
        bands.append(f00 * a + f01 * b + f10 * c + f11 * d)
    return SubbandSet(*bands)


def idwt2(subbands: SubbandSet, bank: FilterBank = HAAR) -> torch.Tensor:
    """
    Transformada inversa (transposta do banco ortonormal)

    Raises:
        DimensionError: subbandas com shapes diferentes
    """
    shape = subbands.ll.shape
    if any(band.shape != shape for band in subbands):
        raise DimensionError(f"subbandas com shapes distintos: {[tuple(b.shape) for b in subbands]}")

    def corner(row: int, col: int) -> torch.Tensor:
        return sum(f[row][col] * band for f, band in zip(bank.filters(), subbands))

    a, b, c, d = corner(0, 0), corner(0, 1), corner(1, 0), corner(1, 1)
    top = torch.stack([a, b], dim=2)
    bottom = torch.stack([c, d], dim=2)
    grid = torch.stack([top, bottom], dim=1)
    return grid.reshape(shape[0] * 2, shape[1] * 2, *shape[2:])


def scale_subbands(subbands: SubbandSet,
                   alpha: Union[torch.Tensor, Sequence[float]]) -> SubbandSet:
    """(a1*ll, a2*lh, a3*hl, a4*hh), diferenciável em ambos"""
    if not torch.is_tensor(alpha):
        alpha = torch.tensor(list(alpha), dtype=subbands.ll.dtype)
    if alpha.numel() != 4:
        raise DimensionError(f"alpha deve ter 4 escalas, recebeu {alpha.numel()}")
    return SubbandSet(*(alpha[i] * band for i, band in enumerate(subbands)))


def subband_energy(subbands: SubbandSet) -> torch.Tensor:
    return sum((band.double() ** 2).sum() for band in subbands)
