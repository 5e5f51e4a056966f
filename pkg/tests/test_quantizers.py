"""
Testes dos quantizadores de pesos e ativações (PACT)
"""

import pytest
import torch

from quant.quantizers import (
    ActQuantParams, WeightQuantParams, act_codes, quantize_acts, quantize_weights, round_half_away,
    ste_grad_check, weight_codes,
)
from utils.errors import DomainError, NearKinkError

ALL_BITS = list(range(1, 9))


def test_round_half_away_from_zero():
    x = torch.tensor([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 0.49])
    assert round_half_away(x).tolist() == [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 0.0]


@pytest.mark.parametrize("bits", range(2, 9))
def test_zero_is_a_weight_grid_point(bits):
    assert quantize_weights(torch.zeros(3), 0.7, bits).tolist() == [0.0, 0.0, 0.0]


def test_weight_examples():
    out = quantize_weights(torch.tensor([0.6, 0.4, -0.6, 5.0]), 1.0, 2)
    assert out.tolist() == [1.0, 0.0, -1.0, 1.0]
    binary = quantize_weights(torch.tensor([-0.3, 0.0, 0.2]), 0.8, 1)
    assert binary.tolist() == pytest.approx([-0.8, 0.8, 0.8])


def test_act_examples():
    out = quantize_acts(torch.tensor([-1.0, 0.0, 0.4, 2.0]), 1.5, 2)
    assert out.tolist() == [0.0, 0.0, 0.5, 1.5]
    for bits in ALL_BITS:
        assert quantize_acts(torch.tensor([-3.0, 0.0]), 1.0, bits).tolist() == [0.0, 0.0]


def test_act_error_bound_at_8_bits():
    x = torch.linspace(0, 1, 10001)
    error = (quantize_acts(x, 1.0, 8) - x).abs().max().item()
    assert error <= 0.5 / 255 + 1e-6


@pytest.mark.parametrize("bits", ALL_BITS)
def test_idempotence(bits):
    torch.manual_seed(bits)
    w = torch.randn(500) * 2
    x = torch.randn(500) * 3
    qw = quantize_weights(w, 1.3, bits)
    qx = quantize_acts(x, 2.0, bits)
    assert torch.equal(quantize_weights(qw, 1.3, bits), qw)
    assert torch.equal(quantize_acts(qx, 2.0, bits), qx)


@pytest.mark.parametrize("bits", ALL_BITS)
def test_cardinality_range_and_monotonicity(bits):
    x = torch.linspace(-4, 4, 4001)
    qw = quantize_weights(x, 1.5, bits)
    qa = quantize_acts(x, 2.5, bits)

    weight_limit = 2 if bits == 1 else 2 ** bits - 1
    assert qw.unique().numel() <= weight_limit
    assert qa.unique().numel() <= 2 ** bits

    assert qw.abs().max().item() <= 1.5 + 1e-6
    assert 0.0 <= qa.min().item() and qa.max().item() <= 2.5 + 1e-6

    assert bool((qw[1:] >= qw[:-1]).all())
    assert bool((qa[1:] >= qa[:-1]).all())


@pytest.mark.parametrize("bits", range(2, 9))
def test_weight_error_bound(bits):
    beta = 1.0
    x = torch.linspace(-beta, beta, 2001)
    step = beta / (2 ** (bits - 1) - 1)
    error = (quantize_weights(x, beta, bits) - x).abs().max().item()
    assert error <= step / 2 + 1e-6


def test_codes_and_steps():
    codes, step = weight_codes(torch.tensor([0.6, -0.6]), 1.0, 3)
    assert codes.tolist() == [2.0, -2.0]
    assert step.item() == pytest.approx(1.0 / 3)
    codes, step = act_codes(torch.tensor([0.4]), 1.5, 2)
    assert codes.tolist() == [1.0] and step.item() == pytest.approx(0.5)


@pytest.mark.parametrize("bits", [0, 9])
def test_bits_out_of_domain(bits):
    with pytest.raises(DomainError):
        quantize_weights(torch.ones(2), 1.0, bits)
    with pytest.raises(DomainError):
        quantize_acts(torch.ones(2), 1.0, bits)


def test_non_positive_clip():
    with pytest.raises(DomainError):
        quantize_weights(torch.ones(2), 0.0, 4)
    with pytest.raises(DomainError):
        quantize_acts(torch.ones(2), -1.0, 4)
    with pytest.raises(DomainError):
        WeightQuantParams(torch.tensor(-0.5))
    assert ActQuantParams(torch.tensor(8.0)).clip.item() == 8.0


def test_weight_ste_gradients():
    w = torch.tensor([2.0, 3.0, 0.1, -0.4], requires_grad=True)
    beta = torch.tensor(1.0, requires_grad=True)
    quantize_weights(w, beta, 4).sum().backward()
    assert w.grad.tolist() == [0.0, 0.0, 1.0, 1.0]
    assert beta.grad.item() == 2.0


def test_binary_weight_gradients_follow_clip_rule():
    w = torch.tensor([-2.0, 0.5], requires_grad=True)
    beta = torch.tensor(1.0, requires_grad=True)
    quantize_weights(w, beta, 1).sum().backward()
    assert w.grad.tolist() == [0.0, 1.0]
    assert beta.grad.item() == -1.0


def test_act_ste_gradients():
    x = torch.tensor([-1.0, 0.5, 2.0], requires_grad=True)
    clip = torch.tensor(1.5, requires_grad=True)
    quantize_acts(x, clip, 2).sum().backward()
    assert x.grad.tolist() == [0.0, 1.0, 0.0]
    assert clip.grad.item() == 1.0


@pytest.mark.parametrize("op,point,clip,wrt,expected", [
    ("weights", 0.3, 1.0, "input", 1.0),
    ("weights", 1.5, 1.0, "input", 0.0),
    ("acts", 0.7, 1.5, "input", 1.0),
    ("acts", 2.0, 1.5, "clip", 1.0),
])
def test_ste_matches_clip_surrogate(op, point, clip, wrt, expected):
    analytic, numeric = ste_grad_check(op, torch.tensor([point], dtype=torch.float64),
                                       torch.ones(1, dtype=torch.float64), clip, 3, wrt=wrt)
    assert analytic == pytest.approx(expected)
    assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-9)


def test_ste_check_refuses_kinks():
    with pytest.raises(NearKinkError):
        ste_grad_check("weights", torch.tensor([1.0005], dtype=torch.float64),
                       torch.ones(1, dtype=torch.float64), 1.0, 4)
    with pytest.raises(NearKinkError):
        ste_grad_check("acts", torch.tensor([0.0], dtype=torch.float64),
                       torch.ones(1, dtype=torch.float64), 1.0, 4)
