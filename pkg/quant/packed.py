"""
Kernels empacotados em bits para inferência de 1 e 2 bits

O produto escalar vira AND + popcount sobre palavras de 64 bits. Ativações
PACT são sem sinal ({0..2^k-1}), por isso a formulação é AND/popcount e não
XNOR: para pesos de 1 bit (+-1),
    acc = popcount(w_pos & a) - popcount(~w_pos & a)
e para pesos de 2 bits (complemento de dois, planos com pesos +1 e -2) cada
par de planos contribui com peso_w * 2^j * popcount(w_i & a_j).
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from utils.errors import DimensionError, DomainError

logger = logging.getLogger(__name__)

WORD_BITS = 64
SUPPORTED_BITS = (1, 2)

# Limite de elementos do tensor intermediário (linhas_w x linhas_a x palavras)
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class PackedMatrix:
    """
    Matriz de códigos k-bit em planos de bits, linha a linha na dimensão de
    redução; cada linha ocupa `words` palavras uint64 com bits de
    preenchimento zerados
    """

    rows: int
    cols: int
    bits: int
    signed: bool
    planes: np.ndarray          # (planos, rows, words) uint64
    plane_weights: Tuple[int, ...]
    scale: float = 1.0

    @property
    def words(self) -> int:
        return self.planes.shape[-1]

    @property
    def binary_sign(self) -> bool:
        """Pesos +-1 de 1 bit: um único plano com os positivos"""
        return self.signed and self.bits == 1


def code_range(bits: int, signed: bool) -> Tuple[int, int]:
    if signed:
        return (-1, 1) if bits == 1 else (-(2 ** (bits - 1)), 2 ** (bits - 1) - 1)
    return 0, 2 ** bits - 1


def _pack_bits(bits: np.ndarray, words: int) -> np.ndarray:
    rows, cols = bits.shape
    padded = np.zeros((rows, words * WORD_BITS), dtype=np.uint8)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.dtype("<u8")).reshape(rows, words)


def pack(codes: np.ndarray, bits: int, signed: bool = False, scale: float = 1.0) -> PackedMatrix:
    """
    Empacota uma matriz de códigos inteiros em planos de bits

    Args:
        codes: Matriz (rows, cols) de inteiros
        bits: 1 ou 2
        signed: True para pesos (1 bit: {-1,+1}; 2 bits: complemento de dois)
        scale: Passo real associado (beta ou alpha_clip / q)

    Raises:
        DomainError: bit-width não suportado ou código fora da faixa
    """
    if bits not in SUPPORTED_BITS:
        raise DomainError(f"kernels empacotados suportam k em {SUPPORTED_BITS}, recebeu {bits}")
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise DimensionError("pack espera uma matriz 2D")
    codes = codes.astype(np.int64)
    rows, cols = codes.shape
    words = max(1, -(-cols // WORD_BITS))

    low, high = code_range(bits, signed)
    if codes.size and (codes.min() < low or codes.max() > high):
        raise DomainError(f"códigos fora de [{low}, {high}] para k={bits}")
    if signed and bits == 1 and codes.size and np.any(codes == 0):
        raise DomainError("pesos de 1 bit devem ser +-1")

    if signed and bits == 1:
        planes = [codes == 1]
        weights: Tuple[int, ...] = (1,)
    elif signed:
        unsigned = codes & (2 ** bits - 1)
        planes = [(unsigned >> j) & 1 for j in range(bits)]
        weights = tuple(2 ** j for j in range(bits - 1)) + (-(2 ** (bits - 1)),)
    else:
        planes = [(codes >> j) & 1 for j in range(bits)]
        weights = tuple(2 ** j for j in range(bits))

    stacked = np.stack([_pack_bits(np.asarray(p, dtype=np.uint8), words) for p in planes])
    return PackedMatrix(rows, cols, bits, signed, stacked, weights, float(scale))


def plane_bits(matrix: PackedMatrix, plane: int) -> np.ndarray:
    """Bits (0/1) de um plano, sem o preenchimento"""
    raw = np.ascontiguousarray(matrix.planes[plane]).view(np.uint8)
    unpacked = np.unpackbits(raw, axis=1, bitorder="little")
    return unpacked[:, :matrix.cols].astype(np.int64)


def unpack(matrix: PackedMatrix) -> np.ndarray:
    """Reconstrói os códigos inteiros"""
    if matrix.binary_sign:
        return 2 * plane_bits(matrix, 0) - 1
    codes = np.zeros((matrix.rows, matrix.cols), dtype=np.int64)
    for j, weight in enumerate(matrix.plane_weights):
        codes += weight * plane_bits(matrix, j)
    return codes


def _and_popcount(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """popcount(x_i & y_j) somado sobre palavras, para todos os pares de linhas"""
    m, words = x.shape
    n = y.shape[0]
    out = np.empty((m, n), dtype=np.int64)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, n * words))
    for start in range(0, m, chunk):
        block = x[start:start + chunk, None, :] & y[None, :, :]
        out[start:start + chunk] = np.bitwise_count(block).sum(axis=-1, dtype=np.int64)
    return out


def _check_operands(w: PackedMatrix, a: PackedMatrix):
    if w.cols != a.cols:
        raise DimensionError(f"dimensões de redução diferentes: {w.cols} != {a.cols}")
    if w.bits not in SUPPORTED_BITS or a.bits not in SUPPORTED_BITS:
        raise DomainError("kernels empacotados suportam apenas k em {1, 2}")
    if not w.signed or a.signed:
        raise DomainError("esperado pesos com sinal e ativações sem sinal")


def packed_dot_1bit(w: PackedMatrix, a: PackedMatrix) -> np.ndarray:
    """
    Acumuladores inteiros para pesos +-1 e ativações {0,1}

    Returns:
        Matriz (w.rows, a.rows) int64
    """
    _check_operands(w, a)
    if not w.binary_sign or a.bits != 1:
        raise DomainError("packed_dot_1bit exige pesos +-1 e ativações de 1 bit")
    positive = w.planes[0]
    return _and_popcount(positive, a.planes[0]) - _and_popcount(np.invert(positive), a.planes[0])


def packed_accumulate(w: PackedMatrix, a: PackedMatrix) -> np.ndarray:
    """Acumuladores inteiros exatos de w . a^T para k em {1, 2}"""
    _check_operands(w, a)
    if w.binary_sign and a.bits == 1:
        return packed_dot_1bit(w, a)

    acc = np.zeros((w.rows, a.rows), dtype=np.int64)
    for j, a_weight in enumerate(a.plane_weights):
        a_plane = a.planes[j]
        if w.binary_sign:
            positive = w.planes[0]
            signed_count = _and_popcount(positive, a_plane) - _and_popcount(np.invert(positive), a_plane)
            acc += a_weight * signed_count
            continue
        for i, w_weight in enumerate(w.plane_weights):
            acc += w_weight * a_weight * _and_popcount(w.planes[i], a_plane)
    return acc


def packed_matmul(w: PackedMatrix, a: PackedMatrix) -> torch.Tensor:
    """
    Produto w . a^T com aritmética inteira até a única multiplicação final
    pela escala (beta * passo_a)

    Returns:
        Tensor float32 (w.rows, a.rows)
    """
    acc = packed_accumulate(w, a)
    scale = np.float32(w.scale) * np.float32(a.scale)
    return torch.from_numpy(acc.astype(np.float32) * scale)


def integer_matmul_reference(w_codes: np.ndarray, a_codes: np.ndarray) -> np.ndarray:
    """Oráculo ingênuo no domínio inteiro: w . a^T"""
    return np.asarray(w_codes, dtype=np.int64) @ np.asarray(a_codes, dtype=np.int64).T


def _int_codes(t: torch.Tensor) -> np.ndarray:
    if t.is_floating_point():
        t = t.round()
    return t.to(torch.int64).numpy()


def packed_conv2d(act_codes: torch.Tensor, weight_codes: torch.Tensor, act_bits: int,
                  weight_bits: int, stride: int, pad: int, act_step: float,
                  weight_step: float) -> torch.Tensor:
    """
    Convolução via im2col + packed_matmul

    Args:
        act_codes: Códigos de ativação (N, C, H, W), inteiros em float
        weight_codes: Códigos de pesos (Cout, C, Kh, Kw)
        act_bits / weight_bits: Bit-widths (1 ou 2)
        stride / pad: Geometria
        act_step / weight_step: Passos reais

    Returns:
        Tensor float32 (N, Cout, H', W')
    """
    n, _, h, w = act_codes.shape
    cout, _, kh, kw = weight_codes.shape
    cols = F.unfold(act_codes.float(), (kh, kw), padding=pad, stride=stride)
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    patches = _int_codes(cols.transpose(1, 2).reshape(-1, cols.shape[1]))

    packed_w = pack(_int_codes(weight_codes.reshape(cout, -1)),
                    weight_bits, signed=True, scale=weight_step)
    packed_a = pack(patches, act_bits, signed=False, scale=act_step)
    out = packed_matmul(packed_w, packed_a)
    return out.reshape(cout, n, out_h * out_w).permute(1, 0, 2).reshape(n, cout, out_h, out_w)
