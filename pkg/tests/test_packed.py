"""
Testes dos kernels AND/popcount de 1 e 2 bits
"""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from quant.packed import (
    integer_matmul_reference, pack, packed_accumulate, packed_conv2d, packed_dot_1bit,
    packed_matmul, plane_bits, unpack,
)
from utils.errors import DimensionError, DomainError


def test_binary_weights_map_to_bits():
    """Testa que a linha (+1, -1, +1) vira os bits 101"""
    matrix = pack(np.array([[1, -1, 1]]), 1, signed=True)
    assert plane_bits(matrix, 0).tolist() == [[1, 0, 1]]


def test_two_bit_activation_planes():
    matrix = pack(np.array([[0, 1, 2, 3]]), 2, signed=False)
    assert plane_bits(matrix, 0).tolist() == [[0, 1, 0, 1]]
    assert plane_bits(matrix, 1).tolist() == [[0, 0, 1, 1]]


@pytest.mark.parametrize("bits,signed,low,high", [
    (1, False, 0, 1), (2, False, 0, 3), (2, True, -2, 1),
])
def test_pack_unpack_identity(bits, signed, low, high):
    codes = np.random.default_rng(bits).integers(low, high + 1, size=(5, 70))
    assert np.array_equal(unpack(pack(codes, bits, signed=signed)), codes)


def test_binary_signed_unpack():
    codes = np.random.default_rng(3).choice([-1, 1], size=(4, 130))
    assert np.array_equal(unpack(pack(codes, 1, signed=True)), codes)


def test_dot_example():
    w = pack(np.array([[1, -1, 1]]), 1, signed=True)
    assert packed_dot_1bit(w, pack(np.array([[1, 0, 1]]), 1)).tolist() == [[2]]
    assert packed_dot_1bit(w, pack(np.zeros((1, 3), dtype=int), 1)).tolist() == [[0]]


@pytest.mark.parametrize("cols", [64, 100])
def test_binary_dot_matches_integer_oracle(cols):
    rng = np.random.default_rng(cols)
    w = rng.choice([-1, 1], size=(32, cols))
    a = rng.integers(0, 2, size=(16, cols))
    acc = packed_dot_1bit(pack(w, 1, signed=True), pack(a, 1))
    assert np.array_equal(acc, integer_matmul_reference(w, a))


@pytest.mark.parametrize("w_bits,a_bits", [(1, 2), (2, 1), (2, 2)])
def test_accumulate_matches_integer_oracle(w_bits, a_bits):
    rng = np.random.default_rng(10 * w_bits + a_bits)
    if w_bits == 1:
        w = rng.choice([-1, 1], size=(32, 64))
    else:
        w = rng.integers(-2, 2, size=(32, 64))
    a = rng.integers(0, 2 ** a_bits, size=(16, 64))
    acc = packed_accumulate(pack(w, w_bits, signed=True), pack(a, a_bits))
    assert np.array_equal(acc, integer_matmul_reference(w, a))


def test_matmul_applies_single_scale():
    rng = np.random.default_rng(7)
    w = rng.choice([-1, 1], size=(8, 64))
    a = rng.integers(0, 2, size=(4, 64))
    out = packed_matmul(pack(w, 1, signed=True, scale=0.5), pack(a, 1, scale=0.25))
    expected = integer_matmul_reference(w, a).astype(np.float32) * np.float32(0.125)
    assert out.dtype == torch.float32
    assert np.array_equal(out.numpy(), expected)


def test_pack_domain_errors():
    with pytest.raises(DomainError):
        pack(np.zeros((1, 4), dtype=int), 3)
    with pytest.raises(DomainError):
        pack(np.array([[4]]), 2)
    with pytest.raises(DomainError):
        pack(np.array([[1, 0, -1]]), 1, signed=True)


def test_accumulate_dimension_error():
    w = pack(np.ones((2, 8), dtype=int), 1, signed=True)
    a = pack(np.ones((2, 9), dtype=int), 1)
    with pytest.raises(DimensionError):
        packed_accumulate(w, a)


@pytest.mark.parametrize("kernel,stride", [(3, 1), (4, 2)])
def test_packed_conv_matches_float_conv(kernel, stride):
    rng = np.random.default_rng(kernel)
    acts = torch.from_numpy(rng.integers(0, 4, size=(2, 4, 6, 6)).astype(np.float32))
    weights = torch.from_numpy(rng.integers(-2, 2, size=(8, 4, kernel, kernel)).astype(np.float32))
    out = packed_conv2d(acts, weights, 2, 2, stride, 1, 1.0, 1.0)
    assert torch.equal(out, F.conv2d(acts, weights, stride=stride, padding=1))
