"""
Testes do núcleo tensorial e do SGD
"""

import math

import numpy as np
import pytest
import torch

from core.optim import build_optimizer, sgd_step
from core.tensor import (
    add, backward, central_difference, conv2d, conv_output_extent, directional_derivative, matmul,
    mul, reduce_mean, reduce_sum, relu, scale, softmax_cross_entropy, straight_through,
)
from utils.errors import ContractError, DimensionError, GeometryError, NumericalError


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (width + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, out_h, out_w))
    for b in range(n):
        for o in range(cout):
            for i in range(out_h):
                for j in range(out_w):
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                out[b, o, i, j] += padded[b, c, i * stride + u, j * stride + v] * w[o, c, u, v]
    return out


def test_conv2d_sum_of_ones():
    """Testa que a correlação de uns com uns soma 9"""
    out = conv2d(torch.ones(1, 1, 3, 3), torch.ones(1, 1, 3, 3), stride=1, pad=0)
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_conv2d_identity_kernel():
    x = torch.randn(2, 1, 5, 5)
    assert torch.equal(conv2d(x, torch.ones(1, 1, 1, 1)), x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1)])
def test_conv2d_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    out = conv2d(torch.from_numpy(x), torch.from_numpy(w), stride, pad).numpy()
    np.testing.assert_allclose(out, naive_conv2d(x, w, stride, pad), atol=1e-5)


def test_conv2d_rejects_non_integral_extent():
    with pytest.raises(GeometryError):
        conv2d(torch.ones(1, 1, 4, 4), torch.ones(1, 1, 3, 3), stride=2, pad=0)
    assert conv_output_extent(8, 4, 2, 1) == 4


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(torch.ones(1, 2, 4, 4), torch.ones(1, 3, 3, 3))


def test_matmul_examples():
    a = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert torch.equal(matmul(a, torch.ones(2, 1)), torch.tensor([[3.0], [7.0]]))
    b = torch.randn(2, 5)
    assert torch.equal(matmul(torch.eye(2), b), b)


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                expected[i, j] += a[i, k] * b[k, j]
    out = matmul(torch.from_numpy(a).float(), torch.from_numpy(b).float()).numpy()
    np.testing.assert_allclose(out, expected, atol=1e-5)


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(torch.ones(2, 3), torch.ones(2, 3))


def test_backward_simple_gradients():
    w = torch.tensor([1.0, -2.0], requires_grad=True)
    backward(reduce_sum(w))
    assert torch.equal(w.grad, torch.ones(2))

    w = torch.tensor([1.0, -2.0], requires_grad=True)
    backward((w ** 2).sum() / 2)
    assert torch.equal(w.grad, torch.tensor([1.0, -2.0]))


def test_backward_contract_errors():
    w = torch.ones(3, requires_grad=True)
    with pytest.raises(ContractError):
        backward(w * 2)
    with pytest.raises(ContractError):
        backward(torch.tensor(1.0))
    with pytest.raises(NumericalError):
        backward((w * float("nan")).sum())


def test_composite_graph_matches_finite_differences():
    """Testa conv -> relu -> matmul -> entropia cruzada contra diferenças centrais"""
    gen = torch.Generator().manual_seed(4)
    x = torch.randn(2, 2, 6, 6, generator=gen, dtype=torch.float64)
    kernel = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64)
    head = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    labels = torch.tensor([1, 3])

    def loss_of(k):
        features = relu(conv2d(x, k, 1, 1)).mean(dim=(2, 3))
        return softmax_cross_entropy(matmul(features, head), labels).reshape(1)

    direction = torch.randn(kernel.shape, generator=gen, dtype=torch.float64)
    analytic = directional_derivative(loss_of, kernel, direction)
    numeric = central_difference(loss_of, kernel, direction, eps=1e-3)
    assert analytic == pytest.approx(numeric, rel=1e-3)


def test_elementwise_ops():
    assert relu(torch.tensor([-1.0, 2.0])).tolist() == [0.0, 2.0]
    assert reduce_mean(torch.ones(4)).item() == 1.0
    loss = softmax_cross_entropy(torch.zeros(1, 2), torch.tensor([0]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-6)


def test_arithmetic_ops_gradients():
    a = torch.tensor([1.0, 2.0], requires_grad=True)
    b = torch.tensor([3.0, -1.0], requires_grad=True)
    out = reduce_sum(scale(add(mul(a, b), a), 0.5))
    assert out.item() == pytest.approx(0.5 * (3.0 - 2.0 + 1.0 + 2.0))
    backward(out)
    assert torch.allclose(a.grad, 0.5 * (b.detach() + 1.0))
    assert torch.allclose(b.grad, 0.5 * a.detach())


def test_straight_through_custom_rule():
    round_ste = straight_through("RoundSTE", torch.round, lambda grad, x: (grad,))
    x = torch.tensor([0.3, 1.7], requires_grad=True)
    y = round_ste(x)
    assert y.tolist() == [0.0, 2.0]
    y.sum().backward()
    assert torch.equal(x.grad, torch.ones(2))


def _param(value: float, grad: float) -> torch.nn.Parameter:
    p = torch.nn.Parameter(torch.tensor([value]))
    p.grad = torch.tensor([grad])
    return p


def test_sgd_plain_step():
    p = _param(1.0, 1.0)
    sgd_step(build_optimizer([p], lr=0.1, weight_decay=0.0, momentum=0.0), [p])
    assert p.item() == pytest.approx(0.9)
    assert p.grad is None


def test_sgd_decay_only_step():
    p = _param(1.0, 0.0)
    sgd_step(build_optimizer([p], lr=0.1, weight_decay=0.1, momentum=0.0), [p])
    assert p.item() == pytest.approx(0.99)


def test_sgd_momentum_recurrence():
    """Testa dois passos com momentum 0.9 contra a recorrência desenrolada"""
    p = _param(1.0, 1.0)
    optimizer = build_optimizer([p], lr=0.1, weight_decay=0.0, momentum=0.9)
    sgd_step(optimizer, [p])
    p.grad = torch.tensor([1.0])
    sgd_step(optimizer, [p])
    # v1 = 1, p1 = 0.9; v2 = 0.9 * 1 + 1 = 1.9, p2 = 0.9 - 0.19
    assert p.item() == pytest.approx(0.71)


def test_sgd_missing_grad():
    p = torch.nn.Parameter(torch.ones(1))
    with pytest.raises(ContractError):
        sgd_step(build_optimizer([p], 0.1, 0.0, 0.0), [p])


def test_conv_and_matmul_gradcheck():
    gen = torch.Generator().manual_seed(6)
    x = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
    b = torch.randn(2, 3, generator=gen, dtype=torch.float64, requires_grad=True)

    def composite(x, w, b):
        return matmul(conv2d(x, w, 1, 1).mean(dim=(2, 3)), b)

    assert torch.autograd.gradcheck(composite, (x, w, b))
