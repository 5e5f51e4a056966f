"""
Testes da rede multiscale: reconstrução, candidatos, BN isolado e máscaras
"""

import pytest
import torch
from torch.func import functional_call

from config.settings import ArchitectureConfig
from core.tensor import central_difference, directional_derivative, softmax_cross_entropy
from models.layers import CandidateContext, CandidateSet, MSLinear
from models.network import (
    build_model, forward, partition_key, reconstruct_weights, set_active_candidate,
    stage_geometry, subband_masked_forward,
)
from utils.errors import CandidateError, ConfigError, DimensionError, DomainError, GeometryError
from utils.helpers import tensors_hash


def _batch(n: int = 6, size: int = 8) -> torch.Tensor:
    return torch.randn(n, 1, size, size, generator=torch.Generator().manual_seed(9))


def _context(bits=(8, 4)):
    flags = {"act": True, "bn": True, "weight": True, "alpha": True}
    return CandidateContext(CandidateSet.of(bits), flags)


def test_candidate_set_validation():
    assert CandidateSet.of([1, 8, 4]).bits == (8, 4, 1)
    with pytest.raises(DomainError):
        CandidateSet((4, 8))
    with pytest.raises(DomainError):
        CandidateSet((8, 8))
    with pytest.raises(DomainError):
        CandidateSet((9,))


def test_identity_alpha_reconstructs_weight(tiny_model):
    for layer in tiny_model.multiscale_layers():
        rebuilt = reconstruct_weights(layer, 8)
        assert (rebuilt - layer.weight).abs().max().item() <= 1e-5


def test_low_pass_alpha_gives_block_mean():
    layer = MSLinear(2, 2, _context())
    with torch.no_grad():
        layer.weight.copy_(torch.tensor([[1.0, 2.0], [3.0, 4.0]]))
        layer.alphas["8"].copy_(torch.tensor([1.0, 0.0, 0.0, 0.0]))
    assert torch.equal(reconstruct_weights(layer, 8), torch.full((2, 2), 2.5))


def test_distinct_alphas_give_distinct_weights(tiny_model):
    layer = tiny_model.multiscale_layers()[1]
    with torch.no_grad():
        layer.alphas["4"].copy_(torch.tensor([1.0, 0.5, 0.5, 0.5]))
    diff = (reconstruct_weights(layer, 8) - reconstruct_weights(layer, 4)).abs().max()
    assert diff.item() > 0


def test_reconstruct_requires_candidate(tiny_model):
    with pytest.raises(CandidateError):
        reconstruct_weights(tiny_model.multiscale_layers()[0], 3)


def test_odd_channels_rejected():
    with pytest.raises(GeometryError):
        MSLinear(3, 2, _context())
    with pytest.raises(ConfigError):
        build_model(ArchitectureConfig(stem_channels=4, stages=[[5, 1]]), [8])


def test_stage_geometry_halves_extent():
    assert stage_geometry(1) == (3, 1)
    assert stage_geometry(2) == (4, 1)


def test_forward_shapes_and_unknown_candidate(tiny_model):
    batch = _batch()
    assert forward(tiny_model, batch, 4).shape == (6, 4)
    with pytest.raises(CandidateError):
        forward(tiny_model, batch, 3)
    with pytest.raises(CandidateError):
        set_active_candidate(tiny_model, 3)
    with pytest.raises(DimensionError):
        tiny_model(torch.zeros(2, 3, 8, 8))


def test_eval_forward_is_deterministic_across_switches(tiny_model):
    tiny_model.eval()
    batch = _batch()
    with torch.no_grad():
        first = forward(tiny_model, batch, 8)
        again = forward(tiny_model, batch, 8)
        forward(tiny_model, batch, 1)
        after_switch = forward(tiny_model, batch, 8)
    assert torch.equal(first, again)
    assert torch.equal(first, after_switch)


def test_zero_image_gives_finite_logits(tiny_model):
    tiny_model.eval()
    with torch.no_grad():
        for bits in tiny_model.candidates:
            assert torch.isfinite(forward(tiny_model, torch.zeros(1, 1, 8, 8), bits)).all()


def test_training_step_touches_only_active_bank(tiny_model):
    """Testa que um forward em modo treino em k=4 não altera os bancos dos outros k"""
    before = {k: tensors_hash(tiny_model.theta_state(k)) for k in tiny_model.candidates}
    bn_before = tiny_model.blocks[0].bn.banks["4"].running_mean.clone()
    tiny_model.train()
    forward(tiny_model, _batch(), 4)
    for k in (8, 2, 1):
        assert tensors_hash(tiny_model.theta_state(k)) == before[k]
    assert not torch.equal(tiny_model.blocks[0].bn.banks["4"].running_mean, bn_before)


def test_partition_covers_every_tensor_once(tiny_model):
    groups = tiny_model.partition()
    names = [n for members in groups.values() for n in members]
    assert sorted(names) == sorted(tiny_model.state_dict())
    assert set(groups) == {"W", "8", "4", "2", "1"}
    assert partition_key("blocks.0.conv.alphas.2") == "2"
    assert partition_key("blocks.0.conv.weight") == "W"


def test_shared_slots_when_candidate_parameters_are_off(tiny_arch):
    tiny_arch.per_candidate_bn = False
    tiny_arch.subband_scales = False
    model = build_model(tiny_arch, [8, 2])
    assert "shared" in model.partition()
    assert not any(".alphas." in name for name in model.state_dict())
    layer = model.multiscale_layers()[0]
    assert reconstruct_weights(layer, 2) is layer.weight


def test_full_mask_equals_normal_forward(tiny_model):
    tiny_model.eval()
    batch = _batch()
    with torch.no_grad():
        normal = forward(tiny_model, batch, 4)
        masked = subband_masked_forward(tiny_model, batch, (True, True, True, True), bits=4)
    assert torch.equal(normal, masked)


def test_masked_forward_restores_state(tiny_model):
    tiny_model.eval()
    set_active_candidate(tiny_model, 2)
    with torch.no_grad():
        low = subband_masked_forward(tiny_model, _batch(), (True, False, False, False))
    assert torch.isfinite(low).all()
    assert tiny_model.active_bits == 2
    assert tiny_model.ctx.subband_mask is None and not tiny_model.ctx.full_precision
    with pytest.raises(DimensionError):
        subband_masked_forward(tiny_model, _batch(), (True, False))


def test_parameter_report_groups(tiny_model):
    report = tiny_model.parameter_report()
    assert report["W"] > report["8"] > 0
    assert report["8"] == report["1"]


@pytest.mark.parametrize("suffix", ["alphas.4", "banks.4.weight", "banks.4.bias"])
def test_theta_gradients_match_finite_differences(tiny_arch, suffix):
    """Testa gradientes de alpha_k e de gamma/beta do BN pela rede contra diferenças centrais"""
    torch.manual_seed(0)
    model = build_model(tiny_arch, [8, 4, 2, 1]).double().eval()
    model.set_active_candidate(4)
    images = _batch().double()
    labels = torch.tensor([0, 1, 2, 3, 0, 1])
    params = dict(model.named_parameters())
    names = [name for name in params if name.endswith(suffix)]
    assert names

    gen = torch.Generator().manual_seed(11)
    for name in names:
        def loss_of(value, name=name):
            with model.ctx.masked(None, full_precision=True):
                logits = functional_call(model, {name: value}, (images,))
            return softmax_cross_entropy(logits, labels).reshape(1)

        point = params[name].detach().clone()
        direction = torch.randn(point.shape, generator=gen, dtype=torch.float64)
        analytic = directional_derivative(loss_of, point, direction)
        numeric = central_difference(loss_of, point, direction, eps=1e-5)
        assert analytic != 0.0, name
        assert analytic == pytest.approx(numeric, rel=1e-3, abs=1e-9), name
