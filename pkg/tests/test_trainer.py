"""
Testes do warmup, do treinamento dinâmico, do amostrador e da avaliação
"""

import numpy as np
import pytest
import torch
from scipy import stats

from config.settings import ArchitectureConfig, PlanConfig
from ingest.dataset import Dataset
from ingest.synthetic import synthetic_task
from models.network import build_model
from training.sampler import BitWidthSampler, sample_bitwidth
from training.trainer import JOINT_BITS, Trainer, evaluate, evaluate_all, evaluate_forced
from utils.errors import ConfigError, ContractError, DataError, DomainError, NumericalError
from utils.helpers import module_hash, tensors_hash


def test_zero_warmup_changes_nothing(tiny_model, tiny_plan, tiny_data):
    before = module_hash(tiny_model)
    Trainer(tiny_model, tiny_plan, tiny_data).warmup(0)
    assert module_hash(tiny_model) == before


def test_warmup_keeps_alpha_frozen_and_adapts_each_candidate(tiny_model, tiny_plan, tiny_data):
    Trainer(tiny_model, tiny_plan, tiny_data, seed=1).warmup(5)
    for alpha in tiny_model.alpha_parameters():
        assert torch.equal(alpha.detach(), torch.ones(4))
        assert alpha.requires_grad
    layers = tiny_model.multiscale_layers()
    assert any(not torch.equal(layer.betas["8"], layer.betas["1"]) for layer in layers)


def test_skip_warmup(tiny_model, tiny_plan, tiny_data):
    tiny_plan.skip_warmup = True
    before = module_hash(tiny_model)
    Trainer(tiny_model, tiny_plan, tiny_data).warmup(3)
    assert module_hash(tiny_model) == before


def test_sampler_reproducible():
    a = BitWidthSampler([8, 4, 2, 1], seed=11).draws(200)
    b = BitWidthSampler([8, 4, 2, 1], seed=11).draws(200)
    assert a == b
    assert set(a) <= {8, 4, 2, 1}


def test_sampler_uniform_frequencies():
    """Testa 10^5 sorteios uniformes com chi-quadrado e tolerância de 2%"""
    candidates = [8, 4, 2, 1]
    draws = np.array(BitWidthSampler(candidates, seed=3).draws(100_000))
    counts = np.array([(draws == k).sum() for k in candidates])
    assert np.all(np.abs(counts / len(draws) - 0.25) <= 0.02)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_sampler_degenerate_probabilities():
    sampler = BitWidthSampler([8, 4, 2, 1], [1.0, 0.0, 0.0, 0.0], seed=0)
    assert {sample_bitwidth(sampler) for _ in range(50)} == {8}


@pytest.mark.parametrize("probs", [[0.5, 0.6, -0.1, 0.0], [0.5, 0.5], [0.2, 0.2, 0.2, 0.2]])
def test_sampler_rejects_bad_probabilities(probs):
    with pytest.raises(DomainError):
        BitWidthSampler([8, 4, 2, 1], probs)


def test_dynamic_training_log(tiny_model, tiny_plan, tiny_data):
    log = Trainer(tiny_model, tiny_plan, tiny_data, tiny_data, seed=2).dynamic_train(2)
    assert len(log.records) == 2 * tiny_plan.steps_per_epoch
    assert all(np.isfinite(log.losses))
    assert set(log.sampled_bits) <= {8, 4, 2, 1}
    assert [epoch for epoch, _ in log.evals] == [0, 1]
    assert len(log.eval_rows()) == 2 * 4


def test_sampled_sequence_is_reproducible(tiny_arch, tiny_plan, tiny_data):
    logs = []
    for _ in range(2):
        torch.manual_seed(0)
        model = build_model(tiny_arch, tiny_plan.candidates)
        logs.append(Trainer(model, tiny_plan, tiny_data, seed=4).dynamic_train(1))
    assert logs[0].sampled_bits == logs[1].sampled_bits
    assert logs[0].losses == logs[1].losses


def test_single_sample_batches_are_skipped_with_hidden_bn(tiny_arch):
    """Testa o treino com BN na camada oculta quando sobra um batch de 1 amostra"""
    tiny_arch.hidden_features = 8
    tiny_arch.validate()
    torch.manual_seed(0)
    model = build_model(tiny_arch, [8, 4, 2, 1])
    data = synthetic_task(seed=3, n=9, num_classes=4, shape=(1, 8, 8))
    plan = PlanConfig(candidates=[8, 4, 2, 1], warmup_iters=1, epochs=2, batch_size=8, lr=0.05)

    trainer = Trainer(model, plan, data, seed=0)
    trainer.warmup()
    log = trainer.dynamic_train()
    assert len(log.records) == 2 * trainer.steps_per_epoch()
    assert all(np.isfinite(log.losses))


def test_trainer_rejects_degenerate_batches(tiny_model, tiny_plan, tiny_data):
    with pytest.raises(DataError):
        Trainer(tiny_model, tiny_plan, tiny_data.subset(1))
    tiny_plan.batch_size = 1
    with pytest.raises(ConfigError):
        Trainer(tiny_model, tiny_plan, tiny_data)


def test_zero_probability_candidates_stay_untouched(tiny_model, tiny_plan, tiny_data):
    tiny_plan.probabilities = [1.0, 0.0, 0.0, 0.0]
    before = {k: tensors_hash(tiny_model.theta_state(k)) for k in (4, 2, 1)}
    shared_before = tensors_hash(tiny_model.shared_state())
    log = Trainer(tiny_model, tiny_plan, tiny_data).dynamic_train(1)
    assert set(log.sampled_bits) == {8}
    for k, digest in before.items():
        assert tensors_hash(tiny_model.theta_state(k)) == digest
    assert tensors_hash(tiny_model.shared_state()) != shared_before


def test_joint_mode_logs_summed_steps(tiny_model, tiny_plan, tiny_data):
    tiny_plan.mode = "joint"
    log = Trainer(tiny_model, tiny_plan, tiny_data).dynamic_train(1)
    assert set(log.sampled_bits) == {JOINT_BITS}
    assert len(log.records) == tiny_plan.steps_per_epoch


def test_dynamic_train_requires_an_epoch(tiny_model, tiny_plan, tiny_data):
    with pytest.raises(ContractError):
        Trainer(tiny_model, tiny_plan, tiny_data).dynamic_train(0)


def test_mismatched_plan_and_model(tiny_model, tiny_data):
    plan = PlanConfig(candidates=[8, 2], steps_per_epoch=1, batch_size=8)
    with pytest.raises(ContractError):
        Trainer(tiny_model, plan, tiny_data).dynamic_train(1)


def test_nan_loss_is_numerical_error(tiny_model, tiny_plan, tiny_data):
    with torch.no_grad():
        tiny_model.stem.weight.fill_(float("nan"))
    with pytest.raises(NumericalError, match="k="):
        Trainer(tiny_model, tiny_plan, tiny_data).dynamic_train(1)


def test_evaluate_all_is_pure(tiny_model, tiny_data):
    tiny_model.train()
    before = module_hash(tiny_model)
    accuracies = evaluate_all(tiny_model, tiny_data)
    assert module_hash(tiny_model) == before
    assert tiny_model.training
    assert list(accuracies) == [8, 4, 2, 1]
    assert all(0.0 <= acc <= 1.0 for acc in accuracies.values())


def test_untrained_model_is_at_chance():
    torch.manual_seed(0)
    arch = ArchitectureConfig(in_channels=1, num_classes=10, stem_channels=4, stages=[[4, 1], [8, 2]])
    model = build_model(arch, [8, 4, 2, 1])
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(1000, 1, 8, 8), dtype=np.uint8)
    data = Dataset(images, np.arange(1000) % 10, "test", 10)
    for accuracy in evaluate_all(model, data).values():
        assert abs(accuracy - 0.1) <= 0.05


def test_forced_evaluation_uses_nearest_candidate(tiny_model, tiny_data):
    row = evaluate_forced(tiny_model, tiny_data, 3)
    assert row["theta_bits"] == 4 and row["forced"]
    assert evaluate_forced(tiny_model, tiny_data, 6)["theta_bits"] == 8
    assert tiny_model.active_bits == 8
    exact = evaluate_forced(tiny_model, tiny_data, 2)
    assert exact["theta_bits"] == 2 and not exact["forced"]
    assert exact["accuracy"] == evaluate(tiny_model, tiny_data, 2)


@pytest.mark.slow
def test_overfits_small_subset():
    """Testa que 64 amostras sintéticas são memorizadas em 8 bits"""
    torch.manual_seed(0)
    arch = ArchitectureConfig(in_channels=1, num_classes=10, stem_channels=16,
                              stages=[[16, 1], [32, 2], [32, 1]])
    data = synthetic_task(seed=0, n=64, num_classes=10, shape=(1, 16, 16))
    plan = PlanConfig(candidates=[8, 4], warmup_iters=0, epochs=200, batch_size=16, lr=0.05)
    model = build_model(arch, plan.candidates)
    trainer = Trainer(model, plan, data, seed=0)
    for _ in range(200):
        trainer.dynamic_train(1)
        if evaluate(model, data, 8) >= 0.99:
            break
    assert evaluate(model, data, 8) >= 0.99
