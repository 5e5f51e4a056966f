"""
Treinamento em dois estágios

Estágio 1 (warmup): para cada k de K, T passos atualizando {W, B_k, h_k}
com alpha congelado. Estágio 2: a cada passo sorteia k ~ p, ativa theta_k e
atualiza {W, B_k, alpha_k, h_k}.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import torch

from config.settings import AppConfig, PlanConfig
from core.optim import build_optimizer, build_scheduler, sgd_step
from core.tensor import backward, softmax_cross_entropy
from ingest.batching import batches, num_batches
from ingest.dataset import Dataset
from models.network import MultiscaleNet
from store.bundle import load
from training.sampler import BitWidthSampler
from utils.errors import ConfigError, ContractError, DataError, IntegrityError, NumericalError
from utils.helpers import nearest_candidate, write_csv

logger = logging.getLogger(__name__)

# Valor da coluna bits no modo joint (soma sobre todos os candidatos)
JOINT_BITS = 0


@dataclass
class StepRecord:
    epoch: int
    step: int
    bits: int
    loss: float


@dataclass
class TrainLog:
    """Registro por passo de otimização e varredura de avaliação por época"""

    records: List[StepRecord] = field(default_factory=list)
    evals: List[Tuple[int, Dict[int, float]]] = field(default_factory=list)

    def add(self, epoch: int, step: int, bits: int, loss: float):
        self.records.append(StepRecord(epoch, step, bits, loss))

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    @property
    def sampled_bits(self) -> List[int]:
        return [r.bits for r in self.records]

    def step_rows(self) -> List[Dict]:
        return [r.__dict__.copy() for r in self.records]

    def eval_rows(self) -> List[Dict]:
        rows = []
        for epoch, accuracies in self.evals:
            for bits, accuracy in accuracies.items():
                rows.append({"epoch": epoch, "bits": bits, "accuracy": accuracy,
                             "theta_bits": bits, "forced": False})
        return rows

    def write(self, output_dir: Union[str, Path]):
        output_dir = Path(output_dir)
        write_csv(self.step_rows(), output_dir / AppConfig.ARTIFACTS["trainlog"], "trainlog")
        write_csv(self.eval_rows(), output_dir / AppConfig.ARTIFACTS["eval_all"], "eval_all")


def evaluate(model: MultiscaleNet, data: Dataset, bits: int, batch_size: int = 512,
             force: bool = False) -> float:
    """
    Acurácia top-1 em k bits (modo eval)

    Com force=True aceita k fora de K, usando o theta do candidato mais próximo.
    O estado do modelo (modo e candidato ativo) é restaurado ao final.
    """
    was_training = model.training
    previous = (model.ctx.active_bits, model.ctx.theta_bits)
    correct = 0
    try:
        model.eval()
        model.set_active_candidate(bits, force=force)
        with torch.no_grad():
            for images, labels in batches(data, batch_size):
                correct += int((model(images).argmax(dim=1) == labels).sum())
    finally:
        model.ctx.active_bits, model.ctx.theta_bits = previous
        model.train(was_training)
    return correct / max(1, len(data))


def evaluate_all(model: MultiscaleNet, data: Dataset, batch_size: int = 512) -> Dict[int, float]:
    """Acurácia top-1 para cada k de K, sem mutar parâmetros"""
    return {bits: evaluate(model, data, bits, batch_size) for bits in model.candidates}


def load_shared_weights(model: MultiscaleNet, path: Union[str, Path]) -> int:
    """
    Inicializa W (parâmetros compartilhados) a partir de um bundle pré-treinado

    Returns:
        Número de tensores copiados
    """
    bundle = load(path)
    own = model.shared_state()
    copied = 0
    with torch.no_grad():
        for name, tensor in own.items():
            source = bundle.tensors.get(name)
            if source is None:
                continue
            if source.shape != tensor.shape:
                raise IntegrityError(f"init_bundle: shape de '{name}' difere: {tuple(source.shape)}")
            tensor.copy_(source)
            copied += 1
    logger.info(f"W inicializado a partir de {path}: {copied} tensores")
    return copied


class Trainer:
    """Executa o warmup e o treinamento dinâmico sobre um MultiscaleNet"""

    def __init__(self, model: MultiscaleNet, plan: PlanConfig, train_data: Dataset,
                 eval_data: Optional[Dataset] = None, seed: int = 0, augment: bool = False):
        if len(train_data) < 2:
            raise DataError("o treino precisa de pelo menos 2 amostras (estatísticas de batch do BN)")
        if plan.batch_size < 2:
            raise ConfigError("plan.batch_size deve ser >= 2")
        self.model = model
        self.plan = plan
        self.train_data = train_data
        self.eval_data = eval_data
        self.seed = seed
        self.augment = augment
        self.optimizer = build_optimizer(model.parameters(), plan.lr, plan.weight_decay, plan.momentum)
        self.log = TrainLog()
        self._shuffle_round = 0

    def _stream(self) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
        """Batches infinitos; cada passagem pelo dataset usa uma semente derivada"""
        while True:
            seed = self.seed * 100003 + self._shuffle_round
            self._shuffle_round += 1
            for images, labels in batches(self.train_data, self.plan.batch_size, seed, self.augment):
                # BN em modo treino não aceita batch de 1 amostra
                if len(labels) > 1:
                    yield images, labels

    def steps_per_epoch(self) -> int:
        return self.plan.steps_per_epoch or num_batches(self.train_data, self.plan.batch_size)

    def _required(self, bits: int) -> List[torch.nn.Parameter]:
        return [p for p in self.model.theta_parameters(bits) if p.requires_grad]

    def _step(self, bits: int, images: torch.Tensor, labels: torch.Tensor) -> float:
        self.model.train()
        self.model.set_active_candidate(bits)
        loss = softmax_cross_entropy(self.model(images), labels)
        backward(loss)
        sgd_step(self.optimizer, self._required(bits))
        return float(loss.detach())

    def _joint_step(self, images: torch.Tensor, labels: torch.Tensor) -> float:
        self.model.train()
        total = None
        for bits in self.model.candidates:
            self.model.set_active_candidate(bits)
            loss = softmax_cross_entropy(self.model(images), labels)
            total = loss if total is None else total + loss
        backward(total)
        required = [p for bits in self.model.candidates for p in self._required(bits)]
        sgd_step(self.optimizer, required)
        return float(total.detach())

    def warmup(self, iterations: Optional[int] = None):
        """
        Estágio 1: T passos por candidato, em ordem, com alpha congelado

        Args:
            iterations: T; padrão plan.warmup_iters ou uma época por candidato
        """
        if self.plan.skip_warmup:
            logger.warning("Warmup desativado pela configuração")
            return
        if iterations is None:
            iterations = self.plan.warmup_iters
        if iterations is None:
            iterations = num_batches(self.train_data, self.plan.batch_size)
        if iterations == 0:
            return

        stream = self._stream()
        self.model.set_alpha_trainable(False)
        try:
            for bits in self.model.candidates:
                losses = []
                for _ in range(iterations):
                    images, labels = next(stream)
                    losses.append(self._checked_step(bits, images, labels, "warmup", 0))
                logger.info(f"Warmup k={bits}: {iterations} passos, loss final {losses[-1]:.4f}")
        finally:
            self.model.set_alpha_trainable(True)

    def _checked_step(self, bits: int, images, labels, stage: str, epoch: int) -> float:
        try:
            if bits == JOINT_BITS:
                return self._joint_step(images, labels)
            return self._step(bits, images, labels)
        except NumericalError as e:
            raise NumericalError(f"{stage}, época {epoch}, k={bits}: {e}") from e

    def dynamic_train(self, epochs: Optional[int] = None) -> TrainLog:
        """
        Estágio 2: L épocas de passos com k sorteado (ou soma sobre K no modo joint)

        Returns:
            TrainLog com um registro por passo e a avaliação de todos os k por época
        """
        epochs = epochs if epochs is not None else self.plan.epochs
        if epochs < 1:
            raise ContractError("dynamic_train exige ao menos uma época")
        bits, probs = self._aligned_probabilities()
        sampler = BitWidthSampler(bits, probs, seed=self.seed)
        scheduler = build_scheduler(self.optimizer, self.plan.resolved_decay_epochs(),
                                    self.plan.decay_factor)
        stream = self._stream()
        steps = self.steps_per_epoch()
        joint = self.plan.mode == "joint"

        for epoch in range(epochs):
            for step in range(steps):
                images, labels = next(stream)
                k = JOINT_BITS if joint else sampler.sample()
                loss = self._checked_step(k, images, labels, "treino", epoch)
                self.log.add(epoch, step, k, loss)
                logger.debug(f"época {epoch} passo {step} k={k} loss={loss:.4f}")
            scheduler.step()

            if self.eval_data is not None:
                accuracies = evaluate_all(self.model, self.eval_data, self.plan.eval_batch_size)
                self.log.evals.append((epoch, accuracies))
                summary = ", ".join(f"{k}b={acc:.2%}" for k, acc in accuracies.items())
                logger.info(f"Época {epoch + 1}/{epochs}: {summary}")
            else:
                logger.info(f"Época {epoch + 1}/{epochs} concluída")
        return self.log

    def _aligned_probabilities(self) -> Tuple[List[int], List[float]]:
        """Probabilidades do plano na ordem de K do modelo"""
        plan_bits, plan_probs = self.plan.sorted_candidates()
        lookup = dict(zip(plan_bits, plan_probs))
        model_bits = list(self.model.candidates)
        if set(lookup) != set(model_bits):
            raise ContractError(f"plano (K={plan_bits}) difere do modelo (K={model_bits})")
        return model_bits, [lookup[k] for k in model_bits]

    def run(self) -> TrainLog:
        self.warmup()
        return self.dynamic_train()


def warmup(model: MultiscaleNet, data: Dataset, plan: PlanConfig, seed: int = 0):
    Trainer(model, plan, data, seed=seed).warmup()


def dynamic_train(model: MultiscaleNet, data: Dataset, plan: PlanConfig, seed: int = 0,
                  eval_data: Optional[Dataset] = None) -> TrainLog:
    return Trainer(model, plan, data, eval_data, seed=seed).dynamic_train()


def evaluate_forced(model: MultiscaleNet, data: Dataset, bits: int,
                    batch_size: int = 512) -> Dict[str, object]:
    """Linha de avaliação com o protocolo nearest-candidate registrado"""
    theta_bits = bits if bits in model.candidates else nearest_candidate(bits, model.candidates)
    accuracy = evaluate(model, data, bits, batch_size, force=True)
    return {"bits": bits, "accuracy": accuracy, "theta_bits": theta_bits,
            "forced": bits not in model.candidates}


@dataclass
class TrainResult:
    model: MultiscaleNet
    log: TrainLog
    train_data: Dataset
    test_data: Dataset


def run_training(config, manager) -> TrainResult:
    """
    Execução completa: dados, modelo semeado, init opcional de W, warmup e estágio 2

    Args:
        config: RunConfig validado
        manager: DatasetManager do dataset configurado
    """
    # Importação local: models.network não depende do trainer
    from models.network import build_model
    from utils.helpers import set_global_seed

    train_data = manager.load("train")
    test_data = manager.load("test")
    plan = config.plan

    set_global_seed(config.seed)
    arch = config.architecture
    if tuple(train_data.shape[:1]) != (arch.in_channels,):
        raise DataError(f"dataset com {train_data.shape[0]} canais, arquitetura espera {arch.in_channels}")
    model = build_model(arch, plan.candidates)
    if plan.init_bundle:
        load_shared_weights(model, plan.init_bundle)

    trainer = Trainer(model, plan, train_data, test_data, seed=config.seed, augment=manager.augment)
    log = trainer.run()
    return TrainResult(model, log, train_data, test_data)
